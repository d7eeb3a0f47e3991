//! The certification bound.
//!
//! For one input the engine computes the clean prediction `p`, its top-2
//! half-gap `d`, and then `k` times draws `n` fresh transformations, measures
//! the discrepancies `Zᵢ = ‖p − f(T_θᵢ(x))‖∞` and minimises the empirical
//! Chernoff bound
//!
//! ```text
//! Y(t) = e^{−d t} · (1/n) Σ e^{Zᵢ t}
//! ```
//!
//! over the temperature grid. The reported bound is `min(1, max_j Y_j / δ)`.
//! If `e^{Zt}` has coefficient of variation `C_v`, the chance that this
//! under-estimates the population bound is below
//! `(1 + n(1−δ)²/C_v²)^{−k}` (see [`underestimation_bound`]).
//!
//! `Y(t)` is evaluated in log space; `Zᵢ t` reaches 10⁴ on the default grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::prob::{linf_discrepancy, ProbVector};
use crate::rng::{domain, substream};
use crate::transforms::{apply, sample_params, TransformSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertConfig {
    pub n_samples: usize,
    pub k_repeats: usize,
    pub delta: f64,
    pub t_grid: Vec<f64>,
    pub rng_seed: u64,
}

impl CertConfig {
    /// `n = 200`, `k = 30`, `δ = 0.9`, 500 evenly spaced temperatures on
    /// `[1e-4, 1e4]`.
    pub fn paper_defaults(rng_seed: u64) -> Self {
        CertConfig {
            n_samples: 200,
            k_repeats: 30,
            delta: 0.9,
            t_grid: linear_grid(1e-4, 1e4, 500),
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.k_repeats == 0 {
            return Err(Error::invalid("n and k must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!(
                "delta {} outside (0, 1)",
                self.delta
            )));
        }
        validate_t_grid(&self.t_grid)
    }
}

fn validate_t_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::invalid("temperature grid is empty"));
    }
    if t_grid.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::invalid("temperatures must be positive and finite"));
    }
    if t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(
            "temperature grid must be strictly increasing",
        ));
    }
    Ok(())
}

/// `count` evenly spaced points from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (count - 1) as f64;
            (0..count)
                .map(|i| {
                    if i + 1 == count {
                        hi
                    } else {
                        lo + step * i as f64
                    }
                })
                .collect()
        }
    }
}

/// Discrepancies `Z₁..Z_n` for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancySample(pub Vec<f64>);

impl DiscrepancySample {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Computes `p = f(x)` and `n` discrepancies under fresh draws from `spec`.
pub fn discrepancy_samples<C, R>(
    f: &C,
    x: &ImageTensor,
    spec: &TransformSpec,
    n: usize,
    rng: &mut R,
) -> Result<DiscrepancySample>
where
    C: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    let p = f.predict(x)?;
    discrepancies_against(f, &p, x, spec, n, rng)
}

/// As [`discrepancy_samples`], with the clean prediction already known.
pub fn discrepancies_against<C, R>(
    f: &C,
    clean: &ProbVector,
    x: &ImageTensor,
    spec: &TransformSpec,
    n: usize,
    rng: &mut R,
) -> Result<DiscrepancySample>
where
    C: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    if n == 0 {
        return Err(Error::invalid(
            "number of transform draws must be at least 1",
        ));
    }
    let batch = (0..n)
        .map(|_| sample_params(spec, x.shape(), rng).map(|theta| apply(&theta, x)))
        .collect::<Result<Vec<_>>>()?;
    let outputs = f.predict_batch(&batch)?;
    if outputs.len() != n {
        return Err(Error::invalid(format!(
            "classifier returned {} outputs for {n} inputs",
            outputs.len()
        )));
    }
    outputs
        .iter()
        .map(|q| linf_discrepancy(clean, q))
        .collect::<Result<Vec<_>>>()
        .map(DiscrepancySample)
}

/// `log((1/n) Σ e^{zᵢ t})`, overflow-safe.
pub fn log_mean_exp(z: &[f64], t: f64) -> f64 {
    let max = z.iter().map(|&v| v * t).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|&v| (v * t - max).exp()).sum();
    max + (sum / z.len() as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChernoffMinimum {
    pub bound: f64,
    pub log_bound: f64,
    pub t: f64,
}

/// Minimum of `Y(t) = e^{−dt}·mean(e^{Zᵢt})` over `t_grid`; the first
/// minimiser wins ties.
pub fn empirical_chernoff(z: &[f64], d: f64, t_grid: &[f64]) -> Result<ChernoffMinimum> {
    if z.is_empty() {
        return Err(Error::invalid("empty discrepancy sample"));
    }
    if !(d >= 0.0) {
        return Err(Error::invalid(format!("gap d = {d} must be non-negative")));
    }
    if t_grid.is_empty() || t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::invalid(
            "temperature grid must be nonempty and positive",
        ));
    }
    let z_max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut best = ChernoffMinimum {
        bound: f64::INFINITY,
        log_bound: f64::INFINITY,
        t: t_grid[0],
    };
    for &t in t_grid {
        let shift = z_max * t;
        let sum: f64 = z.iter().map(|&v| (v * t - shift).exp()).sum();
        let log_y = shift + (sum / z.len() as f64).ln() - d * t;
        if log_y < best.log_bound {
            best = ChernoffMinimum {
                bound: log_y.exp(),
                log_bound: log_y,
                t,
            };
        }
    }
    Ok(best)
}

/// `min(1, max(minima)/δ)`.
pub fn worst_of_k(minima: &[f64], delta: f64) -> f64 {
    let worst = minima.iter().copied().fold(0.0, f64::max);
    (worst / delta).min(1.0)
}

/// Coefficient of variation of `e^{Zt}` over the sample, scale-free so it
/// survives large `Zt`.
pub fn exp_coefficient_of_variation(z: &[f64], t: f64) -> Option<f64> {
    if z.len() < 2 {
        return None;
    }
    let max = z.iter().map(|&v| v * t).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = z.iter().map(|&v| (v * t - max).exp()).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let cv = var.sqrt() / mean;
    cv.is_finite().then_some(cv)
}

/// Per-sample certification output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    /// `min(1, max(k_bounds)/δ)`.
    pub bound: f64,
    pub hit: bool,
    pub predicted: usize,
    pub gap_d: f64,
    pub k_bounds: Vec<f64>,
    /// Temperature attaining the largest of the per-repetition minima.
    pub t_argmin: f64,
    /// Empirical `C_v` of `e^{Z t_argmin}` for that repetition. Diagnostic
    /// only: it does not validate the `C_v` assumption behind the guarantee.
    pub empirical_cv: Option<f64>,
}

/// Runs the full bound computation for one labelled input. `sample_id`
/// selects the random substreams, so the result does not depend on the
/// order samples are processed in.
pub fn certify_sample<C: Classifier + ?Sized>(
    f: &C,
    x: &ImageTensor,
    label: usize,
    spec: &TransformSpec,
    config: &CertConfig,
    sample_id: u64,
) -> Result<BoundRecord> {
    config.validate()?;
    spec.validate()?;
    if label >= f.num_classes() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            f.num_classes()
        )));
    }
    let p = f.predict(x)?;
    let gap_d = p.top2_gap();
    let predicted = p.predicted_class();

    let mut k_bounds = Vec::with_capacity(config.k_repeats);
    let mut worst: Option<(f64, f64, Option<f64>)> = None;
    for rep in 0..config.k_repeats {
        let mut rng = substream(config.rng_seed, domain::CERTIFY, sample_id, rep as u64);
        let z = discrepancies_against(f, &p, x, spec, config.n_samples, &mut rng)?;
        let m = empirical_chernoff(z.values(), gap_d, &config.t_grid)?;
        if worst.is_none_or(|(b, _, _)| m.bound > b) {
            worst = Some((m.bound, m.t, exp_coefficient_of_variation(z.values(), m.t)));
        }
        k_bounds.push(m.bound);
    }
    let (_, t_argmin, empirical_cv) = worst.expect("k_repeats >= 1");
    Ok(BoundRecord {
        bound: worst_of_k(&k_bounds, config.delta),
        hit: predicted == label,
        predicted,
        gap_d,
        k_bounds,
        t_argmin,
        empirical_cv,
    })
}

fn check_guarantee_args(delta: f64, cv: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta {delta} outside (0, 1)")));
    }
    if !(cv > 0.0 && cv.is_finite()) {
        return Err(Error::invalid(format!(
            "coefficient of variation {cv} must be positive"
        )));
    }
    Ok(())
}

/// Upper bound on the probability that the worst-of-k bound under-estimates
/// the population Chernoff bound: `(1 / (1 + n(1−δ)²/C_v²))^k`.
pub fn underestimation_bound(n: usize, k: usize, delta: f64, cv: f64) -> Result<f64> {
    if n == 0 || k == 0 {
        return Err(Error::invalid("n and k must be at least 1"));
    }
    check_guarantee_args(delta, cv)?;
    let ratio = n as f64 * (1.0 - delta).powi(2) / (cv * cv);
    Ok((-(k as f64) * ratio.ln_1p()).exp())
}

/// `⌈C_v² / (1−δ)²⌉`: beyond this many draws the failure probability is
/// below `2^{−k}`.
pub fn min_samples_n0(delta: f64, cv: f64) -> Result<u64> {
    check_guarantee_args(delta, cv)?;
    let x = cv * cv / (1.0 - delta).powi(2);
    // 1 − 0.9 is not exact in binary; snap values within rounding of an
    // integer before taking the ceiling.
    let nearest = x.round();
    let n0 = if (x - nearest).abs() <= 1e-9 * x.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    Ok(n0 as u64)
}
