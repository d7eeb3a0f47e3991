//! Dataset loading (MNIST IDX, CIFAR-10 binary), the synthetic blob rig with
//! its matched classifier, and seeded subsets.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::classifier::{Classifier, Layer, LayerParams, Network, NetworkDescription};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, LabeledSample, Shape};
use crate::metrics::hex_sha256;
use crate::rng::{domain, substream};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub shape: Shape,
    pub samples: Vec<LabeledSample>,
    /// Position of each sample in the dataset it was loaded from.
    pub source_index: Vec<u64>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        samples: Vec<LabeledSample>,
    ) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("dataset has no samples"))?;
        let shape = first.image.shape();
        for (i, s) in samples.iter().enumerate() {
            if s.image.shape() != shape {
                return Err(Error::invalid(format!(
                    "sample {i} has shape {}, expected {shape}",
                    s.image.shape()
                )));
            }
            if s.label >= num_classes {
                return Err(Error::invalid(format!(
                    "sample {i} has label {} but only {num_classes} classes",
                    s.label
                )));
            }
        }
        let source_index = (0..samples.len() as u64).collect();
        Ok(Dataset {
            name: name.into(),
            num_classes,
            shape,
            samples,
            source_index,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Canonical little-endian serialization: shape and class count as
    /// `u64`, then per sample the label as `u64` and pixels as `f32`.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.len() * (8 + 4 * self.shape.len()));
        for v in self.shape.to_array() {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.num_classes as u64).to_le_bytes());
        for s in &self.samples {
            out.extend_from_slice(&(s.label as u64).to_le_bytes());
            for v in s.image.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Hex SHA-256 of [`canonical_bytes`](Self::canonical_bytes).
    pub fn digest(&self) -> String {
        hex_sha256(&self.canonical_bytes())
    }

    /// Fraction of samples the classifier labels correctly.
    pub fn accuracy<C: Classifier + ?Sized>(&self, f: &C) -> Result<f64> {
        let images: Vec<ImageTensor> = self.samples.iter().map(|s| s.image.clone()).collect();
        let preds = f.predict_batch(&images)?;
        let correct = preds
            .iter()
            .zip(&self.samples)
            .filter(|(p, s)| p.predicted_class() == s.label)
            .count();
        Ok(correct as f64 / self.len() as f64)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Parses an IDX image file and its label file.
pub fn parse_mnist_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    if images.len() < 16 {
        return Err(Error::Format(format!(
            "IDX image file truncated: expected at least 16 header bytes, got {}",
            images.len()
        )));
    }
    if be_u32(images, 0) != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad magic 0x{:08x} in IDX image file (expected 0x{IDX_IMAGES_MAGIC:08x})",
            be_u32(images, 0)
        )));
    }
    if labels.len() < 8 {
        return Err(Error::Format(format!(
            "IDX label file truncated: expected at least 8 header bytes, got {}",
            labels.len()
        )));
    }
    if be_u32(labels, 0) != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad magic 0x{:08x} in IDX label file (expected 0x{IDX_LABELS_MAGIC:08x})",
            be_u32(labels, 0)
        )));
    }
    let count = be_u32(images, 4) as usize;
    let rows = be_u32(images, 8) as usize;
    let cols = be_u32(images, 12) as usize;
    let n_labels = be_u32(labels, 4) as usize;
    if count != n_labels {
        return Err(Error::Format(format!(
            "IDX count mismatch: {count} images but {n_labels} labels"
        )));
    }
    let pixels = rows * cols;
    let expected = 16 + count * pixels;
    if images.len() != expected {
        return Err(Error::Format(format!(
            "IDX image file length {} does not match expected {expected}",
            images.len()
        )));
    }
    if labels.len() != 8 + count {
        return Err(Error::Format(format!(
            "IDX label file length {} does not match expected {}",
            labels.len(),
            8 + count
        )));
    }
    let shape = Shape::new(1, rows, cols);
    let samples = (0..count)
        .map(|i| {
            let data = images[16 + i * pixels..16 + (i + 1) * pixels]
                .iter()
                .map(|&b| b as f32 / 255.0)
                .collect();
            Ok(LabeledSample {
                image: ImageTensor::new(shape, data)?,
                label: labels[8 + i] as usize,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new("mnist", 10, samples)
}

pub fn load_mnist_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset> {
    let images = read_file(images_path.as_ref())?;
    let labels = read_file(labels_path.as_ref())?;
    parse_mnist_idx(&images, &labels)
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Parses concatenated CIFAR-10 binary records.
pub fn parse_cifar10_bin(bytes: &[u8]) -> Result<Vec<LabeledSample>> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Format(format!(
            "CIFAR-10 data length {} is not a multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    let shape = Shape::new(3, 32, 32);
    bytes
        .chunks_exact(CIFAR_RECORD)
        .map(|rec| {
            let data = rec[1..].iter().map(|&b| b as f32 / 255.0).collect();
            Ok(LabeledSample {
                image: ImageTensor::new(shape, data)?,
                label: rec[0] as usize,
            })
        })
        .collect()
}

pub fn load_cifar10_bin<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::invalid("no CIFAR-10 batch files given"));
    }
    let mut samples = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let bytes = read_file(p)?;
        samples.extend(parse_cifar10_bin(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", p.display())),
            other => other,
        })?);
    }
    Dataset::new("cifar10", 10, samples)
}

/// Seeded selection of `count` samples without replacement, in random order.
pub fn subset(dataset: &Dataset, count: usize, seed: u64) -> Result<Dataset> {
    if count > dataset.len() {
        return Err(Error::invalid(format!(
            "subset of {count} requested from {} samples",
            dataset.len()
        )));
    }
    if count == 0 {
        return Err(Error::invalid("subset size must be at least 1"));
    }
    let mut rng = substream(seed, domain::SUBSET, 0, 0);
    let picks = index::sample(&mut rng, dataset.len(), count);
    Ok(Dataset {
        name: dataset.name.clone(),
        num_classes: dataset.num_classes,
        shape: dataset.shape,
        samples: picks.iter().map(|i| dataset.samples[i].clone()).collect(),
        source_index: picks.iter().map(|i| dataset.source_index[i]).collect(),
    })
}

pub const SYNTHETIC_SHAPE: Shape = Shape {
    channels: 1,
    height: 8,
    width: 8,
};

const HIDDEN: usize = 32;
const TRAIN_PER_CLASS: usize = 200;
const RIDGE: f64 = 1e-3;
const LOGIT_SCALE: f32 = 12.0;
const TARGET_ACCURACY: f64 = 0.95;
const MAX_ATTEMPTS: u64 = 64;

fn class_center(label: usize, k: usize, shape: Shape) -> (f64, f64) {
    let cy = (shape.height as f64 - 1.0) / 2.0;
    let cx = (shape.width as f64 - 1.0) / 2.0;
    let radius = 0.3 * shape.height.min(shape.width) as f64;
    let angle = 2.0 * std::f64::consts::PI * label as f64 / k as f64;
    (cy + radius * angle.sin(), cx + radius * angle.cos())
}

fn blob_image<R: Rng + ?Sized>(label: usize, k: usize, shape: Shape, rng: &mut R) -> ImageTensor {
    let jitter = Normal::new(0.0, 0.4).unwrap();
    let noise = Normal::new(0.0, 0.03).unwrap();
    let (cy, cx) = class_center(label, k, shape);
    let (cy, cx) = (cy + jitter.sample(rng), cx + jitter.sample(rng));
    let amplitude: f64 = rng.random_range(0.6..1.0);
    let width = 0.25 * shape.height.min(shape.width) as f64;
    let mut data = Vec::with_capacity(shape.len());
    for _ in 0..shape.channels {
        for y in 0..shape.height {
            for x in 0..shape.width {
                let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                let v = 0.1 + amplitude * (-r2 / (2.0 * width * width)).exp() + noise.sample(rng);
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    ImageTensor::new(shape, data).expect("clamped blob image")
}

/// Balanced labels in shuffled order.
fn blob_samples<R: Rng + ?Sized>(
    count: usize,
    k: usize,
    shape: Shape,
    rng: &mut R,
) -> Vec<LabeledSample> {
    let mut labels: Vec<usize> = (0..count).map(|i| i % k).collect();
    for i in (1..labels.len()).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    labels
        .into_iter()
        .map(|label| LabeledSample {
            image: blob_image(label, k, shape, rng),
            label,
        })
        .collect()
}

fn fit_blob_model(k: usize, shape: Shape, seed: u64, attempt: u64) -> Result<Network> {
    let d = shape.len();
    let description = NetworkDescription {
        input_shape: shape,
        num_classes: k,
        layers: vec![
            Layer::Flatten,
            Layer::Dense {
                out_features: HIDDEN,
            },
            Layer::Relu,
            Layer::Dense { out_features: k },
            Layer::Softmax,
        ],
    };
    let mut rng = substream(seed, domain::SYNTHETIC_MODEL, attempt, 0);
    let w_dist = Normal::new(0.0, 2.0 / (d as f64).sqrt()).unwrap();
    let w1: Vec<f32> = (0..HIDDEN * d)
        .map(|_| w_dist.sample(&mut rng) as f32)
        .collect();
    let b1: Vec<f32> = (0..HIDDEN)
        .map(|_| rng.random_range(-0.5f32..0.5))
        .collect();

    let train = blob_samples(TRAIN_PER_CLASS * k, k, shape, &mut rng);
    let m = train.len();
    // Hidden activations plus a constant column for the output bias.
    let mut h = DMatrix::<f64>::zeros(m, HIDDEN + 1);
    let mut y = DMatrix::<f64>::zeros(m, k);
    for (r, s) in train.iter().enumerate() {
        let x = s.image.data();
        for j in 0..HIDDEN {
            let mut acc = b1[j] as f64;
            for (w, v) in w1[j * d..(j + 1) * d].iter().zip(x) {
                acc += *w as f64 * *v as f64;
            }
            h[(r, j)] = acc.max(0.0);
        }
        h[(r, HIDDEN)] = 1.0;
        y[(r, s.label)] = 1.0;
    }
    let mut gram = h.transpose() * &h;
    for i in 0..HIDDEN {
        gram[(i, i)] += RIDGE * m as f64;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numeric("ridge system is not positive definite".into()))?;
    let rhs = h.transpose() * &y;
    let beta = chol.solve(&rhs);

    // Dense layout is out_features × in_features, row-major.
    let mut w2 = vec![0f32; k * HIDDEN];
    let mut b2 = vec![0f32; k];
    for c in 0..k {
        let col: DVector<f64> = beta.column(c).into();
        for j in 0..HIDDEN {
            w2[c * HIDDEN + j] = col[j] as f32 * LOGIT_SCALE;
        }
        b2[c] = col[HIDDEN] as f32 * LOGIT_SCALE;
    }
    let params = vec![
        LayerParams::default(),
        LayerParams {
            weight: w1,
            bias: b1,
        },
        LayerParams::default(),
        LayerParams {
            weight: w2,
            bias: b2,
        },
        LayerParams::default(),
    ];
    Network::new(description, params)
}

/// Class-structured blob images and a matched random-feature network whose
/// output layer is a ridge least-squares fit to one-hot targets. Model
/// fitting is retried with fresh features until clean accuracy on the
/// returned dataset reaches 95%.
pub fn synthetic_dataset(
    seed: u64,
    count: usize,
    shape: Shape,
    num_classes: usize,
) -> Result<(Dataset, Network)> {
    if count == 0 {
        return Err(Error::invalid(
            "synthetic dataset needs at least one sample",
        ));
    }
    if num_classes < 2 {
        return Err(Error::invalid(
            "synthetic dataset needs at least two classes",
        ));
    }
    if shape.is_empty() {
        return Err(Error::invalid(format!("degenerate image shape {shape}")));
    }
    let mut rng = substream(seed, domain::SYNTHETIC_DATA, 0, 0);
    let samples = blob_samples(count, num_classes, shape, &mut rng);
    let dataset = Dataset::new(format!("synthetic-{seed}"), num_classes, samples)?;
    let mut best: Option<(f64, Network)> = None;
    for attempt in 0..MAX_ATTEMPTS {
        let net = fit_blob_model(num_classes, shape, seed, attempt)?;
        let acc = dataset.accuracy(&net)?;
        if acc >= TARGET_ACCURACY {
            return Ok((dataset, net));
        }
        if best.as_ref().is_none_or(|(a, _)| acc > *a) {
            best = Some((acc, net));
        }
    }
    let (acc, _) = best.expect("at least one attempt");
    Err(Error::Numeric(format!(
        "no synthetic model reached {TARGET_ACCURACY} accuracy (best {acc})"
    )))
}

/// Digest of a network's CCW1 encoding.
pub fn network_digest(net: &Network) -> String {
    hex_sha256(&crate::classifier::write_ccw1(net))
}
