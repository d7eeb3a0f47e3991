//! Chernoff-Cramer certification of classifier robustness under randomly
//! sampled parametric input transformations.
//!
//! For an input `x` with clean probability vector `p`, the engine bounds the
//! probability that a random transformation `T_θ` moves the prediction. The
//! bound goes through the max-norm discrepancy `Z = ‖p − f(T_θ(x))‖∞`: the
//! predicted class cannot change while `Z` stays below half the gap between
//! the two largest entries of `p`, and the tail `P(Z ≥ d)` is bounded with an
//! empirical Chernoff bound made robust by a worst-out-of-k aggregation.
//!
//! Module map:
//!
//! * [`prob`], [`image`]: shared value types and the top-2 gap criterion.
//! * [`transforms`]: parametric image transformations, sampling and grids.
//! * [`classifier`]: black-box classifier interface, the built-in feed-forward
//!   runtime, the `CCW1` weight format and the external bridge protocol.
//! * [`cert`]: the bound computation and its guarantee arithmetic.
//! * [`baselines`]: Clopper-Pearson limits and empirical robust accuracy.
//! * [`metrics`]: PCA / CPCA / ε-sweeps and report serialization.
//! * [`lab`]: analytical tools for the sample-mean statistic.
//! * [`data`]: dataset loaders, the synthetic rig and subsetting.
//! * [`pipeline`]: dataset-level orchestration used by the CLI.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cert;
pub mod classifier;
pub mod data;
pub mod error;
pub mod image;
pub mod lab;
pub mod metrics;
pub mod pipeline;
pub mod prob;
pub mod rng;
pub mod transforms;

pub use error::{Error, Result};
pub use image::{ImageTensor, LabeledSample, Shape};
pub use prob::ProbVector;
