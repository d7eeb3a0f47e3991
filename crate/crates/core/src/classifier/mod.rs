//! Black-box classifiers `f: image → ProbVector`.
//!
//! Two backends sit behind [`ClassifierHandle`]: the built-in feed-forward
//! runtime ([`Network`], loaded from `CCW1` files) and an external process
//! speaking the newline-delimited JSON bridge protocol ([`BridgeClient`]).

mod bridge;
mod ccw1;
mod network;

use std::path::Path;

pub use bridge::{decode_f32le, encode_f32le, BridgeClient, Message, PROTOCOL_VERSION};
pub use ccw1::{load_weights, read_ccw1, save_weights, write_ccw1, MAGIC};
pub use network::{Layer, LayerParams, Network, NetworkDescription};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, Shape};
use crate::prob::ProbVector;

pub trait Classifier: Send + Sync {
    fn num_classes(&self) -> usize;

    fn input_shape(&self) -> Shape;

    /// One probability vector per image, in order.
    fn predict_batch(&self, batch: &[ImageTensor]) -> Result<Vec<ProbVector>>;

    fn predict(&self, x: &ImageTensor) -> Result<ProbVector> {
        let mut out = self.predict_batch(std::slice::from_ref(x))?;
        out.pop()
            .ok_or_else(|| Error::invalid("classifier returned no output"))
    }
}

pub(crate) fn check_batch_shapes(expected: Shape, batch: &[ImageTensor]) -> Result<()> {
    for (i, img) in batch.iter().enumerate() {
        if img.shape() != expected {
            return Err(Error::invalid(format!(
                "batch image {i} has shape {}, classifier expects {expected}",
                img.shape()
            )));
        }
    }
    Ok(())
}

pub enum ClassifierHandle {
    Builtin(Network),
    External(BridgeClient),
}

impl ClassifierHandle {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(ClassifierHandle::Builtin(load_weights(path)?))
    }

    /// Spawns `command` through `sh -c` and performs the bridge handshake.
    pub fn spawn_bridge(command: &str, batch_size: usize) -> Result<Self> {
        Ok(ClassifierHandle::External(BridgeClient::spawn(
            command, batch_size,
        )?))
    }

    pub fn describe(&self) -> String {
        match self {
            ClassifierHandle::Builtin(net) => format!("builtin:{}", net.description().summary()),
            ClassifierHandle::External(b) => format!("bridge:{}", b.command()),
        }
    }
}

impl Classifier for ClassifierHandle {
    fn num_classes(&self) -> usize {
        match self {
            ClassifierHandle::Builtin(n) => n.num_classes(),
            ClassifierHandle::External(b) => b.num_classes(),
        }
    }

    fn input_shape(&self) -> Shape {
        match self {
            ClassifierHandle::Builtin(n) => n.input_shape(),
            ClassifierHandle::External(b) => b.input_shape(),
        }
    }

    fn predict_batch(&self, batch: &[ImageTensor]) -> Result<Vec<ProbVector>> {
        match self {
            ClassifierHandle::Builtin(n) => n.predict_batch(batch),
            ClassifierHandle::External(b) => b.predict_batch(batch),
        }
    }
}

/// Max-subtracted exponential normalization.
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("softmax of non-finite logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    ProbVector::new(exps.into_iter().map(|e| e / total).collect())
}
