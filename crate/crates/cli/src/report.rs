use std::collections::HashMap;
use std::path::PathBuf;

use clap::Args;

use cccert::metrics::{merge_sweeps, pca_vs_n, read_json_report};

use crate::util::{parse_eps_grid, usage, write_file, EpsGrid};

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report JSON files written by `certify`.
    #[arg(required = true, value_name = "REPORT")]
    pub reports: Vec<PathBuf>,
    /// Comma-separated ε thresholds [default: 1e-10,1e-7,1e-4].
    #[arg(long, value_name = "LIST", value_parser = parse_eps_grid)]
    pub eps: Option<EpsGrid>,
    /// PCA and CPCA against ε, one column per report.
    #[arg(long, value_name = "PATH")]
    pub out_sweep: Option<PathBuf>,
    /// PCA against the number of draws n, one row per report.
    #[arg(long, value_name = "PATH")]
    pub out_pca_vs_n: Option<PathBuf>,
}

/// Column names from file stems, with `#2`, `#3` appended to repeats.
fn names(paths: &[PathBuf]) -> Vec<String> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().map_or_else(
                || p.display().to_string(),
                |s| s.to_string_lossy().into_owned(),
            );
            let count = seen.entry(stem.clone()).or_insert(0);
            *count += 1;
            if *count == 1 {
                stem
            } else {
                format!("{stem}#{count}")
            }
        })
        .collect()
}

pub fn run(args: ReportArgs) -> anyhow::Result<()> {
    if args.out_sweep.is_none() && args.out_pca_vs_n.is_none() {
        return usage("nothing to do: pass --out-sweep or --out-pca-vs-n");
    }
    let eps = args.eps.unwrap_or_default().0;
    let mut reports = Vec::with_capacity(args.reports.len());
    for (name, path) in names(&args.reports).into_iter().zip(&args.reports) {
        reports.push((name, read_json_report(path)?));
    }
    let first = &reports[0].1.dataset.digest;
    for ((_, r), path) in reports.iter().zip(&args.reports).skip(1) {
        if &r.dataset.digest != first {
            anyhow::bail!(
                "{}: dataset digest {} differs from {} in {}",
                path.display(),
                r.dataset.digest,
                first,
                args.reports[0].display()
            );
        }
    }
    if let Some(path) = &args.out_sweep {
        let table = merge_sweeps(&reports, &eps)?;
        write_file(path, table.to_csv())?;
    }
    if let Some(path) = &args.out_pca_vs_n {
        let table = pca_vs_n(&reports, &eps)?;
        write_file(path, table.to_csv())?;
    }
    Ok(())
}
