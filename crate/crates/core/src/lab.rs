//! Analytical toolbox around the Chernoff statistic
//! `Y = e^{−at} (1/n) Σ e^{Xᵢt}`.
//!
//! * [`yup`] / [`minimize_yup`]: lognormal-mean style upper confidence bound
//!   on `Y`, minimised over `t`.
//! * [`exp_uniform_moments`]: mean, variance and third central moment of
//!   `e^{tX}` for `X ~ U(0, 1)`.
//! * [`berry_esseen_rhs`]: distance bound between the law of the sample mean
//!   and its normal limit.
//! * [`fft_mean_density`]: discretised density of `(1/n) Σ e^{tXᵢ}` by
//!   repeated convolution, with lower/upper brackets.

use std::str::FromStr;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ln(f64::MAX)`: beyond this `e^t` overflows.
pub const MAX_T: f64 = 709.0;

pub const DEFAULT_Q: f64 = 2.0;

/// Berry–Esseen constant.
pub const BERRY_ESSEEN_C: f64 = 0.4784;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    pub mu_hat: f64,
    pub sigma2_hat: f64,
    pub n: usize,
    pub q: f64,
}

impl MomentSummary {
    pub fn population(mu: f64, sigma2: f64, n: usize, q: f64) -> Result<Self> {
        if !(sigma2 >= 0.0) || !mu.is_finite() || !sigma2.is_finite() {
            return Err(Error::invalid(format!(
                "bad moments mu={mu}, sigma2={sigma2}"
            )));
        }
        if n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        Ok(MomentSummary {
            mu_hat: mu,
            sigma2_hat: sigma2,
            n,
            q,
        })
    }

    /// Sample mean and unbiased sample variance.
    pub fn from_samples(xs: &[f64], q: f64) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::invalid("need at least two samples for a variance"));
        }
        let n = xs.len() as f64;
        let mu = xs.iter().sum::<f64>() / n;
        let s2 = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0);
        Self::population(mu, s2, xs.len(), q)
    }
}

/// Exponent of [`yup`].
pub fn log_yup(t: f64, a: f64, m: &MomentSummary) -> f64 {
    let s2 = m.sigma2_hat;
    let spread = (s2 * (1.0 + t * t * s2 / 2.0)).sqrt();
    t * m.mu_hat + t * t * s2 / 2.0 + t * m.q / (m.n as f64).sqrt() * spread - a * t
}

/// `exp{tμ̂ + t²σ̂²/2 + t(q/√n)√(σ̂²(1 + t²σ̂²/2)) − at}`.
pub fn yup(t: f64, a: f64, m: &MomentSummary) -> f64 {
    log_yup(t, a, m).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YupMinimum {
    pub t_min: f64,
    pub y_min: f64,
}

/// Golden-section search for the minimum of [`log_yup`] over `log t`,
/// to relative tolerance `tol` in `t`.
pub fn minimize_yup(
    a: f64,
    m: &MomentSummary,
    t_range: (f64, f64),
    tol: f64,
) -> Result<YupMinimum> {
    let (lo, hi) = t_range;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::invalid(format!(
            "bad temperature range [{lo}, {hi}]"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let g = |s: f64| log_yup(s.exp(), a, m);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut x0, mut x3) = (lo.ln(), hi.ln());
    let mut x1 = x3 - inv_phi * (x3 - x0);
    let mut x2 = x0 + inv_phi * (x3 - x0);
    let (mut g1, mut g2) = (g(x1), g(x2));
    // In log t, a relative tolerance in t is an absolute one.
    while x3 - x0 > tol {
        if !(g1.is_finite() && g2.is_finite()) {
            return Err(Error::Numeric(format!(
                "Y^up exponent is not finite near t = {}",
                x1.exp()
            )));
        }
        if g1 <= g2 {
            x3 = x2;
            x2 = x1;
            g2 = g1;
            x1 = x3 - inv_phi * (x3 - x0);
            g1 = g(x1);
        } else {
            x0 = x1;
            x1 = x2;
            g1 = g2;
            x2 = x0 + inv_phi * (x3 - x0);
            g2 = g(x2);
        }
    }
    // Compare the bracket ends too, so monotone exponents land on the edge.
    let candidates = [x0, 0.5 * (x0 + x3), x3];
    let (s, v) = candidates
        .iter()
        .map(|&s| (s, g(s)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    if !v.is_finite() {
        return Err(Error::Numeric(format!(
            "Y^up exponent is not finite at t = {}",
            s.exp()
        )));
    }
    Ok(YupMinimum {
        t_min: s.exp(),
        y_min: v.exp(),
    })
}

/// Distribution of the `Xᵢ` in a Y^up table row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum XDistribution {
    Uniform01,
    /// Normal with mean 0 and the given standard deviation.
    Normal {
        sd: f64,
    },
}

impl XDistribution {
    pub fn mean(&self) -> f64 {
        match self {
            XDistribution::Uniform01 => 0.5,
            XDistribution::Normal { .. } => 0.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            XDistribution::Uniform01 => 1.0 / 12.0,
            XDistribution::Normal { sd } => sd * sd,
        }
    }
}

impl std::fmt::Display for XDistribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            XDistribution::Uniform01 => write!(f, "U(0,1)"),
            XDistribution::Normal { sd } => write!(f, "N(0,{sd})"),
        }
    }
}

impl FromStr for XDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("U(0,1)") || s.eq_ignore_ascii_case("uniform") {
            return Ok(XDistribution::Uniform01);
        }
        if let Some(inner) = s.strip_prefix("N(0,").and_then(|r| r.strip_suffix(')')) {
            let sd: f64 = inner
                .parse()
                .map_err(|_| Error::invalid(format!("bad standard deviation in `{s}`")))?;
            if sd > 0.0 && sd.is_finite() {
                return Ok(XDistribution::Normal { sd });
            }
        }
        Err(Error::invalid(format!(
            "unknown distribution `{s}` (expected U(0,1) or N(0,SD))"
        )))
    }
}

/// One row of the reference Y^up table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub dist: XDistribution,
    pub n: usize,
    pub a: f64,
    pub t_min: f64,
    pub yup: f64,
}

const fn row(dist: XDistribution, n: usize, a: f64, t_min: f64, yup: f64) -> ReferenceRow {
    ReferenceRow {
        dist,
        n,
        a,
        t_min,
        yup,
    }
}

const U: XDistribution = XDistribution::Uniform01;
const N1: XDistribution = XDistribution::Normal { sd: 1.0 };
const N3: XDistribution = XDistribution::Normal { sd: 3.0 };

/// Reference Y^up values. They were computed from sampled moments, so
/// population moments reproduce them only approximately.
pub const REFERENCE_TABLE: [ReferenceRow; 15] = [
    row(U, 100, 1.0, 4.26154, 0.387197),
    row(U, 1000, 1.0, 5.42482, 0.268035),
    row(U, 100, 1.2, 6.27384, 0.117551),
    row(U, 1000, 1.2, 8.04348, 0.0622941),
    row(U, 100, 1.5, 9.33083, 0.0111136),
    row(U, 1000, 1.5, 11.1443, 0.00414658),
    row(N1, 1000, 1.0, 0.928165, 0.642223),
    row(N1, 100, 1.5, 1.10077, 0.505314),
    row(N1, 1000, 1.5, 1.16611, 0.428194),
    row(N1, 100, 3.0, 2.3261, 0.0307293),
    row(N1, 1000, 3.0, 2.64167, 0.0187832),
    row(N3, 100, 3.0, 0.245549, 0.756383),
    row(N3, 1000, 3.0, 0.266487, 0.685306),
    row(N3, 100, 9.0, 0.680637, 0.0587438),
    row(N3, 1000, 9.0, 0.97158, 0.0129443),
];

pub const YUP_T_RANGE: (f64, f64) = (1e-6, 1e3);
pub const YUP_TOL: f64 = 1e-10;

/// Minimum of Y^up with population moments for `dist`.
pub fn yup_population(dist: XDistribution, n: usize, a: f64, q: f64) -> Result<YupMinimum> {
    let m = MomentSummary::population(dist.mean(), dist.variance(), n, q)?;
    minimize_yup(a, &m, YUP_T_RANGE, YUP_TOL)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpMoments {
    pub mu: f64,
    pub sigma2: f64,
    /// Third central moment.
    pub rho: f64,
}

const SERIES_CUTOFF: f64 = 3.0;

/// `Σ_{m≥3} (m−2) t^m / (2·m!)`, equal to `t + t(e^t−1)/2 − (e^t−1)`.
fn variance_core(t: f64) -> f64 {
    if t.abs() >= SERIES_CUTOFF {
        let a = t.exp_m1();
        return t + t * a / 2.0 - a;
    }
    let mut term = t * t * t / 6.0; // t^m/m! at m = 3
    let mut sum = 0.0;
    for m in 3..60 {
        let add = (m as f64 - 2.0) * term / 2.0;
        sum += add;
        if add.abs() <= 1e-18 * sum.abs() {
            break;
        }
        term *= t / (m + 1) as f64;
    }
    sum
}

/// `t² + 2(t²+6)cosh t − 9t sinh t − 12`, summed as
/// `Σ_{k≥3} 2(4k−3)(k−2) t^{2k}/(2k)!` near zero where the closed form
/// cancels catastrophically.
fn third_moment_core(t: f64) -> f64 {
    if t.abs() >= SERIES_CUTOFF {
        return t * t + 2.0 * (t * t + 6.0) * t.cosh() - 9.0 * t * t.sinh() - 12.0;
    }
    let t2 = t * t;
    let mut term = t2 * t2 * t2 / 720.0; // t^{2k}/(2k)! at k = 3
    let mut sum = 0.0;
    for k in 3..40 {
        let kf = k as f64;
        let add = 2.0 * (4.0 * kf - 3.0) * (kf - 2.0) * term;
        sum += add;
        if add <= 1e-18 * sum {
            break;
        }
        term *= t2 / ((2 * k + 1) * (2 * k + 2)) as f64;
    }
    sum
}

/// Moments of `e^{tX}` for `X ~ U(0, 1)`:
///
/// ```text
/// μ  = (e^t − 1)/t
/// σ² = (e^t·t·sinh t − (e^t − 1)²)/t²
/// ρ  = 2e^{3t/2}·sinh(t/2)·(t² + 2(t²+6)cosh t − 9t·sinh t − 12)/(3t³)
/// ```
pub fn exp_uniform_moments(t: f64) -> Result<ExpMoments> {
    if t == 0.0 || !t.is_finite() {
        return Err(Error::invalid(format!(
            "moments need a finite nonzero t (got {t}); the t → 0 limits are μ = 1, σ² = 0"
        )));
    }
    if t.abs() > MAX_T / 1.5 {
        return Err(Error::Numeric(format!("e^(3t/2) overflows at t = {t}")));
    }
    let a = t.exp_m1();
    let mu = a / t;
    let sigma2 = a * variance_core(t) / (t * t);
    let rho = 2.0 * (1.5 * t).exp() * (t / 2.0).sinh() * third_moment_core(t) / (3.0 * t * t * t);
    Ok(ExpMoments { mu, sigma2, rho })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BerryEsseenMode {
    /// `Cρ/(σ⁴n)`.
    #[default]
    Paper,
    /// `Cρ/(σ³√n)`.
    Standard,
}

impl FromStr for BerryEsseenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(BerryEsseenMode::Paper),
            "standard" => Ok(BerryEsseenMode::Standard),
            other => Err(Error::invalid(format!(
                "unknown Berry-Esseen mode `{other}` (paper, standard)"
            ))),
        }
    }
}

pub fn berry_esseen_rhs(t: f64, n: usize, mode: BerryEsseenMode) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let m = exp_uniform_moments(t)?;
    let n = n as f64;
    Ok(match mode {
        BerryEsseenMode::Paper => BERRY_ESSEEN_C * m.rho / (m.sigma2 * m.sigma2 * n),
        BerryEsseenMode::Standard => BERRY_ESSEEN_C * m.rho / (m.sigma2.powf(1.5) * n.sqrt()),
    })
}

/// Discretised law of `(1/n) Σ e^{tXᵢ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDensity {
    pub t: f64,
    pub n: usize,
    pub m: usize,
    /// `n(m−1)+1` equally spaced points: mean of the `n` bin centres.
    pub support: Vec<f64>,
    pub masses: Vec<f64>,
    /// Elementwise lower and upper brackets on `masses`, from bins shifted
    /// half a step right and left. Only defined when `e^t − 1 < 2m`.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl DiscreteDensity {
    /// Spacing between support points.
    pub fn step(&self) -> f64 {
        self.t.exp_m1() / (self.m * self.n) as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.masses)
            .map(|(y, w)| y * w)
            .sum()
    }

    /// CDF with each mass spread uniformly over its cell of width
    /// [`step`](Self::step).
    pub fn cdf(&self, x: f64) -> f64 {
        let h = self.step();
        let start = self.support[0] - h / 2.0;
        if x <= start {
            return 0.0;
        }
        let pos = (x - start) / h;
        let full = (pos.floor() as usize).min(self.masses.len());
        let mut acc: f64 = self.masses[..full].iter().sum();
        if full < self.masses.len() {
            acc += self.masses[full] * (pos - full as f64);
        }
        acc.min(1.0)
    }

    /// `sup_x |F(x) − G(x)|` evaluated at cell edges, where `F` is
    /// piecewise linear and `G` a continuous monotone CDF.
    pub fn sup_distance_to(&self, g: impl Fn(f64) -> f64) -> f64 {
        let h = self.step();
        let mut acc = 0.0;
        let mut best: f64 = 0.0;
        let mut edge = self.support[0] - h / 2.0;
        best = best.max(g(edge).abs());
        for w in &self.masses {
            acc += w;
            edge += h;
            best = best.max((acc - g(edge)).abs());
        }
        best
    }
}

/// Probability that `e^{tX}` falls in `[1 + h(i−1+s), 1 + h(i+s)]` in log
/// form, for `i = 1..m` and shift `s`.
fn bin_masses(t: f64, m: usize, shift: f64) -> Vec<f64> {
    let c = t.exp_m1() / m as f64;
    (1..=m)
        .map(|i| {
            let i = i as f64 + shift;
            ((c * i).ln_1p() - (c * (i - 1.0)).ln_1p()) / t
        })
        .collect()
}

fn convolve_power(v: &[f64], n: usize, len: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = v
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    planner.plan_fft_forward(len).process(&mut buf);
    for z in buf.iter_mut() {
        *z = z.powu(n as u32);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.iter().map(|z| z.re / len as f64).collect()
}

/// Density of the sample mean of `n` copies of `e^{tX}`, `X ~ U(0, 1)`,
/// from `m` bins over `[1, e^t]`.
pub fn fft_mean_density(t: f64, n: usize, m: usize) -> Result<DiscreteDensity> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("t = {t} must be positive")));
    }
    if t > MAX_T {
        return Err(Error::Numeric(format!(
            "e^t overflows at t = {t}; use t <= {MAX_T}"
        )));
    }
    if n == 0 || m < 2 {
        return Err(Error::invalid("need n >= 1 and m >= 2"));
    }
    if n > u32::MAX as usize {
        return Err(Error::invalid("n too large"));
    }
    let len = n
        .checked_mul(m - 1)
        .and_then(|l| l.checked_add(1))
        .ok_or_else(|| Error::invalid("n(m-1)+1 overflows"))?;
    let h = t.exp_m1() / m as f64;
    let support: Vec<f64> = (0..len)
        .map(|j| 1.0 + h * (j as f64 / n as f64 + 0.5))
        .collect();

    let mut planner = FftPlanner::new();
    let v = bin_masses(t, m, 0.0);
    let masses = if n == 1 {
        v.clone()
    } else {
        let mut w = convolve_power(&v, n, len, &mut planner);
        for x in w.iter_mut() {
            *x = x.max(0.0);
        }
        let total: f64 = w.iter().sum();
        w.iter().map(|x| x / total).collect()
    };

    // The leftmost shifted bin starts at 1 − h/2, which must stay positive.
    let (lower, upper) = if t.exp_m1() < 2.0 * m as f64 {
        let bracket = |shift: f64, planner: &mut FftPlanner<f64>| {
            let v = bin_masses(t, m, shift);
            if n == 1 {
                v
            } else {
                convolve_power(&v, n, len, planner)
                    .into_iter()
                    .map(|x| x.max(0.0))
                    .collect()
            }
        };
        (
            Some(bracket(0.5, &mut planner)),
            Some(bracket(-0.5, &mut planner)),
        )
    } else {
        (None, None)
    };

    Ok(DiscreteDensity {
        t,
        n,
        m,
        support,
        masses,
        lower,
        upper,
    })
}

/// Rough relative error of the discretisation: `(e^t − 1)·n/m`.
pub fn fft_error_bound(t: f64, n: usize, m: usize) -> f64 {
    t.exp_m1() * n as f64 / m as f64
}
