use serde::{Deserialize, Serialize};

use super::{check_batch_shapes, softmax, Classifier};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, Shape};
use crate::prob::ProbVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv2d {
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        out_features: usize,
    },
    Softmax,
}

impl Layer {
    fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d { .. } => "max_pool2d",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
            Layer::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Act {
    Spatial(Shape),
    Flat(usize),
}

impl Act {
    fn len(self) -> usize {
        match self {
            Act::Spatial(s) => s.len(),
            Act::Flat(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDescription {
    pub input_shape: Shape,
    pub num_classes: usize,
    pub layers: Vec<Layer>,
}

/// Expected shape of one stored tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSlot {
    pub layer: usize,
    pub name: &'static str,
    pub shape: Vec<usize>,
}

impl TensorSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl NetworkDescription {
    /// Walks the shape chain and lists the parameter tensors in storage
    /// order (per layer: weight, then bias).
    pub fn tensor_slots(&self) -> Result<Vec<TensorSlot>> {
        self.walk().map(|(slots, _)| slots)
    }

    fn walk(&self) -> Result<(Vec<TensorSlot>, Vec<Act>)> {
        let chain_err = |i: usize, layer: &Layer, msg: String| {
            Error::Format(format!(
                "shape-chain error at layer {i} ({}): {msg}",
                layer.name()
            ))
        };
        let s = self.input_shape;
        if s.is_empty() {
            return Err(Error::Format(format!("degenerate input shape {s}")));
        }
        if self.num_classes < 2 {
            return Err(Error::Format(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        let mut act = Act::Spatial(s);
        let mut slots = Vec::new();
        let mut acts = vec![act];
        for (i, layer) in self.layers.iter().enumerate() {
            act = match (*layer, act) {
                (
                    Layer::Conv2d {
                        out_channels,
                        kernel_h,
                        kernel_w,
                        stride,
                        padding,
                    },
                    Act::Spatial(s),
                ) => {
                    if out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 {
                        return Err(chain_err(i, layer, "zero-sized parameter".into()));
                    }
                    let (ph, pw) = (s.height + 2 * padding, s.width + 2 * padding);
                    if ph < kernel_h || pw < kernel_w {
                        return Err(chain_err(
                            i,
                            layer,
                            format!(
                                "kernel {kernel_h}x{kernel_w} larger than padded input {ph}x{pw}"
                            ),
                        ));
                    }
                    slots.push(TensorSlot {
                        layer: i,
                        name: "weight",
                        shape: vec![out_channels, s.channels, kernel_h, kernel_w],
                    });
                    slots.push(TensorSlot {
                        layer: i,
                        name: "bias",
                        shape: vec![out_channels],
                    });
                    Act::Spatial(Shape::new(
                        out_channels,
                        (ph - kernel_h) / stride + 1,
                        (pw - kernel_w) / stride + 1,
                    ))
                }
                (Layer::MaxPool2d { kernel, stride }, Act::Spatial(s)) => {
                    if kernel == 0 || stride == 0 {
                        return Err(chain_err(i, layer, "zero-sized parameter".into()));
                    }
                    if s.height < kernel || s.width < kernel {
                        return Err(chain_err(
                            i,
                            layer,
                            format!("pool kernel {kernel} larger than input {s}"),
                        ));
                    }
                    Act::Spatial(Shape::new(
                        s.channels,
                        (s.height - kernel) / stride + 1,
                        (s.width - kernel) / stride + 1,
                    ))
                }
                (Layer::Relu, a) => a,
                (Layer::Flatten, a) => Act::Flat(a.len()),
                (Layer::Dense { out_features }, Act::Flat(n)) => {
                    if out_features == 0 {
                        return Err(chain_err(i, layer, "zero output features".into()));
                    }
                    slots.push(TensorSlot {
                        layer: i,
                        name: "weight",
                        shape: vec![out_features, n],
                    });
                    slots.push(TensorSlot {
                        layer: i,
                        name: "bias",
                        shape: vec![out_features],
                    });
                    Act::Flat(out_features)
                }
                (Layer::Softmax, Act::Flat(n)) => {
                    if i + 1 != self.layers.len() {
                        return Err(chain_err(
                            i,
                            layer,
                            "softmax must be the final layer".into(),
                        ));
                    }
                    if n != self.num_classes {
                        return Err(chain_err(
                            i,
                            layer,
                            format!(
                                "network outputs {n} values but num_classes is {}",
                                self.num_classes
                            ),
                        ));
                    }
                    Act::Flat(n)
                }
                (Layer::Dense { .. } | Layer::Softmax, Act::Spatial(s)) => {
                    return Err(chain_err(i, layer, format!("expects flat input, got {s}")))
                }
                (Layer::Conv2d { .. } | Layer::MaxPool2d { .. }, Act::Flat(n)) => {
                    return Err(chain_err(
                        i,
                        layer,
                        format!("expects spatial input, got flat {n}"),
                    ))
                }
            };
            acts.push(act);
        }
        if !matches!(self.layers.last(), Some(Layer::Softmax)) {
            return Err(Error::Format("final layer must be softmax".into()));
        }
        Ok((slots, acts))
    }

    pub fn summary(&self) -> String {
        let layers: Vec<String> = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d {
                    out_channels,
                    kernel_h,
                    kernel_w,
                    ..
                } => format!("conv{out_channels}x{kernel_h}x{kernel_w}"),
                Layer::Dense { out_features } => format!("dense{out_features}"),
                other => other.name().to_string(),
            })
            .collect();
        format!("{}->{}", self.input_shape, layers.join("-"))
    }
}

/// Weight and bias of a parametrised layer; empty for the others.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Built-in feed-forward network. Read-only after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    description: NetworkDescription,
    params: Vec<LayerParams>,
    acts: Vec<Act>,
}

impl Network {
    /// `params` has one entry per layer.
    pub fn new(description: NetworkDescription, params: Vec<LayerParams>) -> Result<Self> {
        let (slots, acts) = description.walk()?;
        if params.len() != description.layers.len() {
            return Err(Error::Format(format!(
                "{} parameter sets for {} layers",
                params.len(),
                description.layers.len()
            )));
        }
        for slot in &slots {
            let p = &params[slot.layer];
            let got = if slot.name == "weight" {
                p.weight.len()
            } else {
                p.bias.len()
            };
            if got != slot.len() {
                return Err(Error::Format(format!(
                    "layer {} {} has {got} values, expected {} for shape {:?}",
                    slot.layer,
                    slot.name,
                    slot.len(),
                    slot.shape
                )));
            }
        }
        Ok(Network {
            description,
            params,
            acts,
        })
    }

    pub fn zeros(description: NetworkDescription) -> Result<Self> {
        let slots = description.tensor_slots()?;
        let mut params = vec![LayerParams::default(); description.layers.len()];
        for slot in slots {
            let v = vec![0.0; slot.len()];
            if slot.name == "weight" {
                params[slot.layer].weight = v;
            } else {
                params[slot.layer].bias = v;
            }
        }
        Network::new(description, params)
    }

    pub fn description(&self) -> &NetworkDescription {
        &self.description
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn num_classes(&self) -> usize {
        self.description.num_classes
    }

    pub fn input_shape(&self) -> Shape {
        self.description.input_shape
    }

    /// Pre-softmax activations of the final layer.
    pub fn logits(&self, x: &ImageTensor) -> Result<Vec<f32>> {
        if x.shape() != self.input_shape() {
            return Err(Error::invalid(format!(
                "image shape {} does not match network input {}",
                x.shape(),
                self.input_shape()
            )));
        }
        let mut cur = x.data().to_vec();
        for (i, layer) in self.description.layers.iter().enumerate() {
            let input = self.acts[i];
            let p = &self.params[i];
            cur = match (*layer, input) {
                (
                    Layer::Conv2d {
                        out_channels,
                        kernel_h,
                        kernel_w,
                        stride,
                        padding,
                    },
                    Act::Spatial(s),
                ) => {
                    let Act::Spatial(o) = self.acts[i + 1] else {
                        unreachable!()
                    };
                    conv2d(
                        &cur,
                        s,
                        p,
                        out_channels,
                        kernel_h,
                        kernel_w,
                        stride,
                        padding,
                        o,
                    )
                }
                (Layer::MaxPool2d { kernel, stride }, Act::Spatial(s)) => {
                    let Act::Spatial(o) = self.acts[i + 1] else {
                        unreachable!()
                    };
                    max_pool(&cur, s, kernel, stride, o)
                }
                (Layer::Relu, _) => cur.into_iter().map(|v| v.max(0.0)).collect(),
                (Layer::Flatten, _) => cur,
                (Layer::Dense { out_features }, Act::Flat(n)) => {
                    dense(&cur, &p.weight, &p.bias, n, out_features)
                }
                (Layer::Softmax, _) => break,
                _ => unreachable!("shape chain validated at construction"),
            };
        }
        Ok(cur)
    }

    pub fn forward(&self, x: &ImageTensor) -> Result<ProbVector> {
        let logits = self.logits(x)?;
        softmax(&logits.iter().map(|&v| v as f64).collect::<Vec<_>>())
    }
}

impl Classifier for Network {
    fn num_classes(&self) -> usize {
        self.description.num_classes
    }

    fn input_shape(&self) -> Shape {
        self.description.input_shape
    }

    fn predict_batch(&self, batch: &[ImageTensor]) -> Result<Vec<ProbVector>> {
        check_batch_shapes(self.input_shape(), batch)?;
        batch.iter().map(|x| self.forward(x)).collect()
    }
}

fn dense(x: &[f32], w: &[f32], b: &[f32], n_in: usize, n_out: usize) -> Vec<f32> {
    (0..n_out)
        .map(|o| {
            let row = &w[o * n_in..(o + 1) * n_in];
            let acc: f64 = row.iter().zip(x).map(|(&a, &v)| a as f64 * v as f64).sum();
            (acc + b[o] as f64) as f32
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn conv2d(
    x: &[f32],
    s: Shape,
    p: &LayerParams,
    out_channels: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    o: Shape,
) -> Vec<f32> {
    let mut out = vec![0f32; out_channels * o.height * o.width];
    for oc in 0..out_channels {
        for oy in 0..o.height {
            for ox in 0..o.width {
                let mut acc = p.bias[oc] as f64;
                for ic in 0..s.channels {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= s.height as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= s.width as isize {
                                continue;
                            }
                            let wv = p.weight[((oc * s.channels + ic) * kh + ky) * kw + kx];
                            let xv = x[(ic * s.height + iy as usize) * s.width + ix as usize];
                            acc += wv as f64 * xv as f64;
                        }
                    }
                }
                out[(oc * o.height + oy) * o.width + ox] = acc as f32;
            }
        }
    }
    out
}

fn max_pool(x: &[f32], s: Shape, kernel: usize, stride: usize, o: Shape) -> Vec<f32> {
    let mut out = vec![0f32; s.channels * o.height * o.width];
    for c in 0..s.channels {
        for oy in 0..o.height {
            for ox in 0..o.width {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let v = x[(c * s.height + oy * stride + ky) * s.width + ox * stride + kx];
                        m = m.max(v);
                    }
                }
                out[(c * o.height + oy) * o.width + ox] = m;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_net(d: usize, k: usize) -> NetworkDescription {
        NetworkDescription {
            input_shape: Shape::new(1, 1, d),
            num_classes: k,
            layers: vec![
                Layer::Flatten,
                Layer::Dense { out_features: k },
                Layer::Softmax,
            ],
        }
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let net = Network::zeros(dense_net(4, 5)).unwrap();
        let x = ImageTensor::new(Shape::new(1, 1, 4), vec![0.3, 0.9, 0.1, 0.0]).unwrap();
        let p = net.forward(&x).unwrap();
        for v in p.values() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed_dense_forward() {
        // Pixel 0 drives class 0 with weight 10; others weight 0.
        let mut net = Network::zeros(dense_net(3, 2)).unwrap();
        net.params[1].weight = vec![10.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let x = ImageTensor::new(Shape::new(1, 1, 3), vec![0.9, 0.2, 0.4]).unwrap();
        let p = net.forward(&x).unwrap();
        // softmax([9, 0]) = [1/(1+e^-9), e^-9/(1+e^-9)]
        let expected = 1.0 / (1.0 + (-9.0f64).exp());
        assert!((p.values()[0] - expected).abs() < 1e-7);
        assert_eq!(p.predicted_class(), 0);
    }

    #[test]
    fn shape_chain_errors_name_the_layer() {
        let mut d = dense_net(4, 10);
        d.layers[1] = Layer::Dense { out_features: 8 };
        let err = d.tensor_slots().unwrap_err().to_string();
        assert!(err.contains("layer 2"), "{err}");
        assert!(err.contains("num_classes"), "{err}");

        let d = NetworkDescription {
            input_shape: Shape::new(1, 4, 4),
            num_classes: 2,
            layers: vec![Layer::Dense { out_features: 2 }, Layer::Softmax],
        };
        assert!(d
            .tensor_slots()
            .unwrap_err()
            .to_string()
            .contains("layer 0"));

        let d = NetworkDescription {
            input_shape: Shape::new(1, 4, 4),
            num_classes: 16,
            layers: vec![Layer::Flatten],
        };
        assert!(d.tensor_slots().is_err());
    }

    #[test]
    fn conv_and_pool_shapes() {
        let d = NetworkDescription {
            input_shape: Shape::new(1, 8, 8),
            num_classes: 3,
            layers: vec![
                Layer::Conv2d {
                    out_channels: 4,
                    kernel_h: 3,
                    kernel_w: 3,
                    stride: 1,
                    padding: 1,
                },
                Layer::Relu,
                Layer::MaxPool2d {
                    kernel: 2,
                    stride: 2,
                },
                Layer::Flatten,
                Layer::Dense { out_features: 3 },
                Layer::Softmax,
            ],
        };
        let slots = d.tensor_slots().unwrap();
        assert_eq!(slots[0].shape, vec![4, 1, 3, 3]);
        assert_eq!(slots[2].shape, vec![3, 64]);
    }

    #[test]
    fn batch_shape_mismatch_is_rejected() {
        let net = Network::zeros(dense_net(4, 2)).unwrap();
        let bad = ImageTensor::filled(Shape::new(1, 2, 2), 0.0).unwrap();
        assert!(matches!(
            net.predict_batch(&[bad]),
            Err(Error::InvalidInput(_))
        ));
    }
}
