use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::Context;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use cccert::baselines::FailureCriterion;
use cccert::cert::{linear_grid, CertConfig};
use cccert::classifier::{save_weights, ClassifierHandle};
use cccert::data::{
    load_cifar10_bin, load_mnist_idx, network_digest, subset, synthetic_dataset, Dataset,
    SYNTHETIC_SHAPE,
};
use cccert::metrics::{write_report, CertificationReport, CpConfig, ReportFormat, Table};
use cccert::pipeline::{run_certification, RunOptions};

use crate::util::{parse_eps_grid, parse_transform, usage, write_file, EpsGrid};

pub const THREADS_ENV: &str = "CCCERT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synthetic,
    Mnist,
    Cifar10,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriterionArg {
    /// Prediction differs from the clean prediction.
    PredictionChange,
    /// Prediction differs from the label.
    LabelMismatch,
}

impl From<CriterionArg> for FailureCriterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::PredictionChange => FailureCriterion::PredictionChange,
            CriterionArg::LabelMismatch => FailureCriterion::LabelMismatch,
        }
    }
}

/// Every setting of a certification run. Flags win over `--config`
/// values, which win over the built-in defaults.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CertifySettings {
    /// Dataset source [default: synthetic].
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetKind>,
    /// MNIST IDX image file.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mnist_images: Option<PathBuf>,
    /// MNIST IDX label file.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mnist_labels: Option<PathBuf>,
    /// CIFAR-10 binary batch files, concatenated in order.
    #[arg(long, value_name = "PATH", num_args = 1..)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cifar: Option<Vec<PathBuf>>,
    /// Synthetic dataset size [default: 100].
    #[arg(long, value_name = "N")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic_count: Option<usize>,
    /// Synthetic class count [default: 3].
    #[arg(long, value_name = "K")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic_classes: Option<usize>,
    /// Synthetic generator seed [default: 0].
    #[arg(long, value_name = "SEED")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic_seed: Option<u64>,

    /// CCW1 weight file. The synthetic dataset defaults to its matched model.
    #[arg(long, value_name = "PATH", conflicts_with = "bridge")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    /// Adapter command line, run through `sh -c`.
    #[arg(long, value_name = "COMMAND")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bridge: Option<String>,
    /// Images per classifier call [default: 256].
    #[arg(long, value_name = "N")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,

    /// Transformation, e.g. rotation:-10:10 or compose(a,b).
    #[arg(long, value_name = "SPEC", value_parser = parse_transform)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transform: Option<String>,
    /// Transform draws per repetition [default: 200].
    #[arg(long, value_name = "N")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Repetitions [default: 30].
    #[arg(long, value_name = "K")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Quantile used for the worst of k bounds [default: 0.9].
    #[arg(long, value_name = "DELTA")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Smallest t on the linear grid [default: 1e-4].
    #[arg(long, value_name = "T")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    /// Largest t on the linear grid [default: 1e4].
    #[arg(long, value_name = "T")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_max: Option<f64>,
    /// Number of t grid points [default: 500].
    #[arg(long, value_name = "N")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_count: Option<usize>,
    /// Master seed for transform draws [default: 0].
    #[arg(long, value_name = "SEED")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    /// Samples to certify, drawn without replacement; 0 keeps all
    /// [default: 500, capped at the dataset size].
    #[arg(long, value_name = "N")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset: Option<usize>,
    /// Seed of the subset draw [default: 0].
    #[arg(long, value_name = "SEED")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset_seed: Option<u64>,

    /// Run the Clopper-Pearson baseline with this many trials per sample.
    #[arg(long, value_name = "N")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cp_n: Option<u64>,
    /// Clopper-Pearson significance level [default: 0.05].
    #[arg(long, value_name = "ALPHA")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cp_alpha: Option<f64>,
    /// Clopper-Pearson failure event [default: prediction-change].
    #[arg(long, value_enum, value_name = "CRITERION")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cp_criterion: Option<CriterionArg>,
    /// Grid points per parameter for empirical robust accuracy; 0 skips it [default: 20].
    #[arg(long, value_name = "R")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub era_r: Option<usize>,

    /// Comma-separated ε thresholds for the accuracy curves [default: 1e-10,1e-7,1e-4].
    #[arg(long, value_name = "LIST", value_parser = parse_eps_grid)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<EpsGrid>,
    /// Report path prefix; writes PREFIX.json and PREFIX.csv [default: cccert-report].
    #[arg(long, value_name = "PREFIX")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Also write the accuracy curves as CSV.
    #[arg(long, value_name = "PATH")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_curves: Option<PathBuf>,
    /// Worker threads [default: all cores; CCCERT_THREADS overrides].
    #[arg(long, value_name = "N")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl CertifySettings {
    /// Fills unset fields from `base`.
    fn or(self, base: CertifySettings) -> anyhow::Result<CertifySettings> {
        let mut merged = serde_json::to_value(base)?;
        let top = serde_json::to_value(self)?;
        if let (Some(m), Some(t)) = (merged.as_object_mut(), top.as_object()) {
            m.extend(t.clone());
        }
        Ok(serde_json::from_value(merged)?)
    }
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[command(flatten)]
    pub settings: CertifySettings,
    /// JSON file with settings under their flag names.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Write the resolved settings as a JSON config file.
    #[arg(long, value_name = "PATH")]
    pub save_config: Option<PathBuf>,
    /// Write the classifier weights (builtin models only) as CCW1.
    #[arg(long, value_name = "PATH")]
    pub save_model: Option<PathBuf>,
}

fn load_config(path: &PathBuf) -> anyhow::Result<CertifySettings> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_str::<CertifySettings>(&text) {
        Ok(s) => {
            if let Some(t) = &s.transform {
                if let Err(e) = parse_transform(t) {
                    return usage(format!("{}: {e}", path.display()));
                }
            }
            if let Some(g) = &s.eps {
                let joined =
                    g.0.iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join(",");
                if let Err(e) = parse_eps_grid(&joined) {
                    return usage(format!("{}: {e}", path.display()));
                }
            }
            Ok(s)
        }
        Err(e) => usage(format!("{}: {e}", path.display())),
    }
}

fn load_dataset(s: &CertifySettings) -> anyhow::Result<(Dataset, Option<ClassifierHandle>)> {
    match s.dataset.unwrap_or(DatasetKind::Synthetic) {
        DatasetKind::Synthetic => {
            let seed = s.synthetic_seed.unwrap_or(0);
            let count = s.synthetic_count.unwrap_or(100);
            let classes = s.synthetic_classes.unwrap_or(3);
            let (mut ds, net) = synthetic_dataset(seed, count, SYNTHETIC_SHAPE, classes)?;
            ds.name = format!("synthetic(seed={seed},count={count},classes={classes})");
            Ok((ds, Some(ClassifierHandle::Builtin(net))))
        }
        DatasetKind::Mnist => {
            let (Some(images), Some(labels)) = (&s.mnist_images, &s.mnist_labels) else {
                return usage("--dataset mnist needs --mnist-images and --mnist-labels");
            };
            let mut ds = load_mnist_idx(images, labels)?;
            ds.name = format!("mnist({})", images.display());
            Ok((ds, None))
        }
        DatasetKind::Cifar10 => {
            let Some(paths) = s.cifar.as_ref().filter(|p| !p.is_empty()) else {
                return usage("--dataset cifar10 needs --cifar with at least one batch file");
            };
            let mut ds = load_cifar10_bin(paths)?;
            let names: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
            ds.name = format!("cifar10({})", names.join("+"));
            Ok((ds, None))
        }
    }
}

fn resolve_threads(flag: Option<usize>) -> anyhow::Result<usize> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => usage(format!(
                "{THREADS_ENV} must be a positive integer, got `{v}`"
            )),
        };
    }
    match flag {
        Some(0) => usage("--threads must be at least 1"),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn run(args: CertifyArgs) -> anyhow::Result<()> {
    let s = match &args.config {
        Some(path) => args.settings.clone().or(load_config(path)?)?,
        None => args.settings.clone(),
    };
    let Some(transform) = s.transform.clone() else {
        return usage("a transformation is required (--transform or the config file)");
    };
    if let Some(path) = &args.save_config {
        write_file(path, serde_json::to_string_pretty(&s)? + "\n")?;
    }

    if s.model.is_some() && s.bridge.is_some() {
        return usage("--model and --bridge are mutually exclusive");
    }
    let (full, matched) = load_dataset(&s)?;
    let batch = s.batch_size.unwrap_or(256);
    if batch == 0 {
        return usage("--batch-size must be at least 1");
    }
    let model = if let Some(path) = &s.model {
        ClassifierHandle::load(path)?
    } else if let Some(cmd) = &s.bridge {
        ClassifierHandle::spawn_bridge(cmd, batch)?
    } else if let Some(m) = matched {
        m
    } else {
        return usage("this dataset needs a classifier: pass --model or --bridge");
    };
    if let Some(path) = &args.save_model {
        match &model {
            ClassifierHandle::Builtin(net) => {
                save_weights(net, path)?;
                log::info!("wrote {} (digest {})", path.display(), network_digest(net));
            }
            ClassifierHandle::External(_) => {
                return usage("--save-model needs a builtin model, not a bridge")
            }
        }
    }

    let dataset = match s.subset {
        Some(c) if c > full.len() => {
            return usage(format!(
                "--subset {c} exceeds the dataset size {}",
                full.len()
            ));
        }
        Some(0) => full,
        requested => {
            let count = requested.unwrap_or(500).min(full.len());
            let seed = s.subset_seed.unwrap_or(0);
            if count == full.len() {
                full
            } else {
                let mut sub = subset(&full, count, seed)?;
                sub.name = format!("{}/subset(count={count},seed={seed})", full.name);
                sub
            }
        }
    };

    let mut cert = CertConfig::paper_defaults(s.seed.unwrap_or(0));
    cert.n_samples = s.n.unwrap_or(cert.n_samples);
    cert.k_repeats = s.k.unwrap_or(cert.k_repeats);
    cert.delta = s.delta.unwrap_or(cert.delta);
    if s.t_min.is_some() || s.t_max.is_some() || s.t_count.is_some() {
        let lo = s.t_min.unwrap_or(1e-4);
        let hi = s.t_max.unwrap_or(1e4);
        let count = s.t_count.unwrap_or(500);
        if !(lo > 0.0 && hi > lo && count >= 1) {
            return usage(format!(
                "t grid needs 0 < t-min < t-max and t-count >= 1, got {lo}, {hi}, {count}"
            ));
        }
        cert.t_grid = linear_grid(lo, hi, count);
    }
    let cp = s.cp_n.map(|n_trials| CpConfig {
        n_trials,
        alpha: s.cp_alpha.unwrap_or(0.05),
        criterion: s
            .cp_criterion
            .unwrap_or(CriterionArg::PredictionChange)
            .into(),
    });
    let opts = RunOptions {
        cert,
        spec: transform.parse()?,
        cp,
        era_r: match s.era_r.unwrap_or(20) {
            0 => None,
            r => Some(r),
        },
        eps_grid: s.eps.clone().unwrap_or_default().0,
        threads: resolve_threads(s.threads)?,
    };

    log::info!(
        "certifying {} samples of {} ({} classes) under {} with {}",
        dataset.len(),
        dataset.name,
        dataset.num_classes,
        opts.spec,
        model.describe()
    );
    let decile = AtomicUsize::new(0);
    let progress = |done: usize, total: usize| {
        let d = done * 10 / total;
        if decile.fetch_max(d, Ordering::Relaxed) < d {
            log::info!("{done}/{total} samples");
        }
    };
    let report = run_certification(&model, &dataset, &model.describe(), &opts, Some(&progress))?;
    summarize(&report);

    let prefix = s
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("cccert-report"));
    for (ext, format) in [("json", ReportFormat::Json), ("csv", ReportFormat::Csv)] {
        let mut path = prefix.clone().into_os_string();
        path.push(format!(".{ext}"));
        let path = PathBuf::from(path);
        write_report(&report, &path, format)?;
        log::info!("wrote {}", path.display());
    }
    if let Some(path) = &s.out_curves {
        write_file(path, curves(&report).to_csv())?;
    }
    Ok(())
}

fn curves(report: &CertificationReport) -> Table {
    let mut columns = vec!["epsilon".to_string(), "pca".to_string()];
    if report.curves.cpca.is_some() {
        columns.push("cpca".into());
    }
    let rows = report
        .curves
        .pca
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut row = vec![Some(p.epsilon), Some(p.value)];
            if let Some(c) = &report.curves.cpca {
                row.push(Some(c[i].value));
            }
            row
        })
        .collect();
    Table { columns, rows }
}

fn summarize(report: &CertificationReport) {
    log::info!("clean accuracy {:.4}", report.clean_accuracy);
    for p in &report.curves.pca {
        log::info!("PCA({:e}) = {:.4}", p.epsilon, p.value);
    }
    for p in report.curves.cpca.iter().flatten() {
        log::info!("CPCA({:e}) = {:.4}", p.epsilon, p.value);
    }
    if let Some(era) = report.era {
        log::info!("ERA = {era:.4}");
    }
    log::info!("report digest {}", report.digest());
}
