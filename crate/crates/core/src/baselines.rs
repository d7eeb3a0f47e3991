//! Reference points for the Chernoff bound: the exact one-sided
//! Clopper-Pearson upper limit on the failure probability, and empirical
//! robust accuracy (ERA) over a deterministic parameter grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::error::{Error, Result};
use crate::image::LabeledSample;
use crate::transforms::{apply, grid_params, sample_params, TransformParams, TransformSpec};
use crate::ImageTensor;

const QUANTILE_TOL: f64 = 1e-15;

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// `ln B(a, b)`. When the smaller argument is a modest integer the ratio
/// `Γ(b)/Γ(a+b)` is summed directly; the plain gamma difference loses
/// about eight digits once `b` reaches 10⁷.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    let (small, large) = if a <= b { (a, b) } else { (b, a) };
    if small.fract() == 0.0 && small <= 1e6 {
        let m = small as u64;
        let tail: f64 = (0..m).map(|i| (large + i as f64).ln()).sum();
        return ln_gamma(small) - tail;
    }
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// `p` with `I_p(a, b) = q`, by bisection.
pub fn beta_quantile(q: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if regularized_beta(a, b, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < QUANTILE_TOL {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Exact one-sided upper confidence limit for a binomial proportion after
/// `k_fail` failures in `n` trials, at confidence `1 − alpha`.
pub fn clopper_pearson_upper(n: u64, k_fail: u64, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("Clopper-Pearson needs at least one trial"));
    }
    if k_fail > n {
        return Err(Error::invalid(format!(
            "{k_fail} failures out of {n} trials"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha {alpha} outside (0, 1)")));
    }
    if k_fail == n {
        return Ok(1.0);
    }
    Ok(beta_quantile(
        1.0 - alpha,
        (k_fail + 1) as f64,
        (n - k_fail) as f64,
    ))
}

/// What counts as a failure when counting transformed predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCriterion {
    /// Prediction differs from the clean prediction.
    #[default]
    PredictionChange,
    /// Prediction differs from the ground-truth label.
    LabelMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CPOutcome {
    pub n_trials: u64,
    pub n_failures: u64,
    pub alpha: f64,
    pub upper: f64,
}

/// Draws `n` transformations, counts failures and returns the upper limit.
#[allow(clippy::too_many_arguments)]
pub fn cp_certify_sample<C, R>(
    f: &C,
    x: &ImageTensor,
    label: usize,
    spec: &TransformSpec,
    n: u64,
    alpha: f64,
    criterion: FailureCriterion,
    rng: &mut R,
) -> Result<CPOutcome>
where
    C: Classifier + ?Sized,
    R: Rng + ?Sized,
{
    if n == 0 {
        return Err(Error::invalid("Clopper-Pearson needs at least one trial"));
    }
    let reference = match criterion {
        FailureCriterion::PredictionChange => f.predict(x)?.predicted_class(),
        FailureCriterion::LabelMismatch => label,
    };
    const CHUNK: u64 = 1024;
    let mut failures = 0u64;
    let mut done = 0u64;
    while done < n {
        let m = CHUNK.min(n - done);
        let batch = (0..m)
            .map(|_| sample_params(spec, x.shape(), rng).map(|theta| apply(&theta, x)))
            .collect::<Result<Vec<_>>>()?;
        failures += f
            .predict_batch(&batch)?
            .iter()
            .filter(|q| q.predicted_class() != reference)
            .count() as u64;
        done += m;
    }
    Ok(CPOutcome {
        n_trials: n,
        n_failures: failures,
        alpha,
        upper: clopper_pearson_upper(n, failures, alpha)?,
    })
}

/// Whether `h(T_θ(x)) = y` for every `θ` in `grid`.
pub fn robust_on_grid<C: Classifier + ?Sized>(
    f: &C,
    sample: &LabeledSample,
    grid: &[TransformParams],
) -> Result<bool> {
    let batch: Vec<ImageTensor> = grid.iter().map(|p| apply(p, &sample.image)).collect();
    Ok(f.predict_batch(&batch)?
        .iter()
        .all(|q| q.predicted_class() == sample.label))
}

/// ERA on an explicit grid.
pub fn era_on_grid<C: Classifier + ?Sized>(
    f: &C,
    samples: &[LabeledSample],
    grid: &[TransformParams],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("ERA needs a nonempty dataset"));
    }
    let mut robust = 0usize;
    for (i, s) in samples.iter().enumerate() {
        if robust_on_grid(f, s, grid).map_err(|e| e.at_sample(i))? {
            robust += 1;
        }
    }
    Ok(robust as f64 / samples.len() as f64)
}

/// Fraction of samples classified correctly under every point of
/// `grid_params(spec, r)`.
pub fn era<C: Classifier + ?Sized>(
    f: &C,
    samples: &[LabeledSample],
    spec: &TransformSpec,
    r: usize,
) -> Result<f64> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("ERA needs a nonempty dataset"))?;
    let grid = grid_params(spec, first.image.shape(), r)?;
    era_on_grid(f, samples, &grid)
}
