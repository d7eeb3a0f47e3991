//! Dataset-level certification run: bounds for every sample, optional
//! Clopper-Pearson outcomes and ERA, assembled into a report.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::baselines::{cp_certify_sample, robust_on_grid};
use crate::cert::{certify_sample, CertConfig};
use crate::classifier::Classifier;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{
    validate_eps_grid, CertificationReport, CpConfig, DatasetInfo, RunEcho, SampleResult,
};
use crate::rng::{domain, substream};
use crate::transforms::{grid_params, TransformSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub cert: CertConfig,
    pub spec: TransformSpec,
    pub cp: Option<CpConfig>,
    pub era_r: Option<usize>,
    pub eps_grid: Vec<f64>,
    /// Worker threads; results do not depend on this.
    pub threads: usize,
}

/// Called with (samples finished, total) as work completes.
pub type Progress<'a> = &'a (dyn Fn(usize, usize) + Sync);

pub fn run_certification<C: Classifier + ?Sized>(
    f: &C,
    dataset: &Dataset,
    model: &str,
    opts: &RunOptions,
    progress: Option<Progress<'_>>,
) -> Result<CertificationReport> {
    opts.cert.validate()?;
    opts.spec.validate()?;
    validate_eps_grid(&opts.eps_grid)?;
    if let Some(cp) = &opts.cp {
        if cp.n_trials == 0 || !(cp.alpha > 0.0 && cp.alpha < 1.0) {
            return Err(Error::invalid(format!(
                "Clopper-Pearson needs n >= 1 and alpha in (0, 1), got n = {}, alpha = {}",
                cp.n_trials, cp.alpha
            )));
        }
    }
    if dataset.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if f.input_shape() != dataset.shape {
        return Err(Error::invalid(format!(
            "model expects {} inputs but the dataset has {} images",
            f.input_shape(),
            dataset.shape
        )));
    }
    if f.num_classes() != dataset.num_classes {
        return Err(Error::invalid(format!(
            "model has {} classes but the dataset has {}",
            f.num_classes(),
            dataset.num_classes
        )));
    }
    let era_grid = opts
        .era_r
        .map(|r| grid_params(&opts.spec, dataset.shape, r))
        .transpose()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let done = AtomicUsize::new(0);
    let total = dataset.len();

    let per_sample = pool.install(|| {
        dataset
            .samples
            .par_iter()
            .zip(dataset.source_index.par_iter())
            .enumerate()
            .map(|(i, (s, &sample_id))| {
                let run = || -> Result<(SampleResult, Option<bool>)> {
                    let record =
                        certify_sample(f, &s.image, s.label, &opts.spec, &opts.cert, sample_id)?;
                    let cp = opts
                        .cp
                        .as_ref()
                        .map(|cp| {
                            let mut rng = substream(
                                opts.cert.rng_seed,
                                domain::CLOPPER_PEARSON,
                                sample_id,
                                0,
                            );
                            cp_certify_sample(
                                f,
                                &s.image,
                                s.label,
                                &opts.spec,
                                cp.n_trials,
                                cp.alpha,
                                cp.criterion,
                                &mut rng,
                            )
                        })
                        .transpose()?;
                    let robust = era_grid
                        .as_ref()
                        .map(|g| robust_on_grid(f, s, g))
                        .transpose()?;
                    Ok((
                        SampleResult {
                            sample_id,
                            label: s.label,
                            record,
                            cp,
                        },
                        robust,
                    ))
                };
                let out = run().map_err(|e| e.at_sample(i));
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                if let Some(p) = progress {
                    p(n, total);
                }
                out
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let era = era_grid
        .as_ref()
        .map(|_| per_sample.iter().filter(|(_, r)| *r == Some(true)).count() as f64 / total as f64);
    let samples: Vec<SampleResult> = per_sample.into_iter().map(|(s, _)| s).collect();
    let echo = RunEcho {
        cert: opts.cert.clone(),
        transform: opts.spec.to_string(),
        cp: opts.cp.clone(),
        era_r: opts.era_r,
        eps_grid: opts.eps_grid.clone(),
    };
    let info = DatasetInfo {
        name: dataset.name.clone(),
        digest: dataset.digest(),
        count: dataset.len(),
        num_classes: dataset.num_classes,
        shape: dataset.shape,
    };
    CertificationReport::build(echo, info, model.to_string(), samples, era)
}
