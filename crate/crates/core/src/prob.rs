//! Probability vectors and the top-2 gap criterion.
//!
//! If `‖p − q‖∞ < d` where `d = (p₍₁₎ − p₍₂₎)/2` is half the gap between the
//! two largest entries of `p`, then `argmax q = argmax p`. Everything the
//! certification engine bounds is phrased in terms of these three quantities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on `Σ pᵢ = 1`, loose enough for 32-bit softmax output.
pub const SUM_TOLERANCE: f64 = 1e-5;

/// A classifier's output distribution over `K ≥ 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid(format!(
                "probability vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::invalid(format!(
                "probability component {i} = {v} outside [0, 1]"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid(format!(
                "probability vector sums to {sum}, expected 1 within {SUM_TOLERANCE}"
            )));
        }
        Ok(ProbVector(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// Index of the largest component, lowest index on ties.
    pub fn predicted_class(&self) -> usize {
        predicted_class(self)
    }

    pub fn top2_gap(&self) -> f64 {
        top2_gap(self)
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ProbVector::new(values)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

/// `d = (p₍₁₎ − p₍₂₎) / 2`, always in `[0, 0.5]`.
pub fn top2_gap(p: &ProbVector) -> f64 {
    let mut first = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in p.values() {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    ((first - second) / 2.0).clamp(0.0, 0.5)
}

/// `‖p − q‖∞`.
pub fn linf_discrepancy(p: &ProbVector, q: &ProbVector) -> Result<f64> {
    if p.num_classes() != q.num_classes() {
        return Err(Error::invalid(format!(
            "probability vectors differ in length: {} vs {}",
            p.num_classes(),
            q.num_classes()
        )));
    }
    Ok(p.values()
        .iter()
        .zip(q.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

pub fn predicted_class(p: &ProbVector) -> usize {
    let mut best = 0;
    for (i, &v) in p.values().iter().enumerate().skip(1) {
        if v > p.values()[best] {
            best = i;
        }
    }
    best
}
