mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cccert::classifier::{
    load_weights, save_weights, softmax, Classifier, ClassifierHandle, Layer, LayerParams, Network,
    NetworkDescription,
};
use cccert::{ImageTensor, Shape};

/// Reference forward pass over nested vectors, with explicit zero padding.
fn naive_forward(net: &Network, x: &ImageTensor) -> Vec<f64> {
    let s = x.shape();
    let mut spatial: Vec<Vec<Vec<f64>>> = (0..s.channels)
        .map(|c| {
            (0..s.height)
                .map(|y| (0..s.width).map(|xx| x.get(c, y, xx) as f64).collect())
                .collect()
        })
        .collect();
    let mut flat: Option<Vec<f64>> = None;
    for (layer, p) in net.description().layers.iter().zip(net.params()) {
        match *layer {
            Layer::Conv2d {
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
            } => {
                let cin = spatial.len();
                let (h, w) = (spatial[0].len(), spatial[0][0].len());
                let (ph, pw) = (h + 2 * padding, w + 2 * padding);
                let mut padded = vec![vec![vec![0.0; pw]; ph]; cin];
                for c in 0..cin {
                    for y in 0..h {
                        for xx in 0..w {
                            padded[c][y + padding][xx + padding] = spatial[c][y][xx];
                        }
                    }
                }
                let oh = (ph - kernel_h) / stride + 1;
                let ow = (pw - kernel_w) / stride + 1;
                let wt = |oc: usize, ic: usize, ky: usize, kx: usize| {
                    p.weight[oc * cin * kernel_h * kernel_w
                        + ic * kernel_h * kernel_w
                        + ky * kernel_w
                        + kx] as f64
                };
                let mut out = vec![vec![vec![0.0; ow]; oh]; out_channels];
                for (oc, plane) in out.iter_mut().enumerate() {
                    for (oy, row) in plane.iter_mut().enumerate() {
                        for (ox, v) in row.iter_mut().enumerate() {
                            let mut acc = p.bias[oc] as f64;
                            for (ic, chan) in padded.iter().enumerate() {
                                for ky in 0..kernel_h {
                                    for kx in 0..kernel_w {
                                        acc += wt(oc, ic, ky, kx)
                                            * chan[oy * stride + ky][ox * stride + kx];
                                    }
                                }
                            }
                            *v = acc;
                        }
                    }
                }
                spatial = out;
            }
            Layer::MaxPool2d { kernel, stride } => {
                let (h, w) = (spatial[0].len(), spatial[0][0].len());
                let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
                spatial = spatial
                    .iter()
                    .map(|chan| {
                        (0..oh)
                            .map(|oy| {
                                (0..ow)
                                    .map(|ox| {
                                        let mut m = f64::NEG_INFINITY;
                                        for ky in 0..kernel {
                                            for kx in 0..kernel {
                                                m = m.max(chan[oy * stride + ky][ox * stride + kx]);
                                            }
                                        }
                                        m
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
            }
            Layer::Relu => match flat.as_mut() {
                Some(v) => v.iter_mut().for_each(|a| *a = a.max(0.0)),
                None => spatial
                    .iter_mut()
                    .flatten()
                    .flatten()
                    .for_each(|a| *a = a.max(0.0)),
            },
            Layer::Flatten => {
                if flat.is_none() {
                    flat = Some(spatial.iter().flatten().flatten().copied().collect());
                }
            }
            Layer::Dense { out_features } => {
                let v = flat.as_ref().unwrap();
                let n = v.len();
                flat = Some(
                    (0..out_features)
                        .map(|o| {
                            p.bias[o] as f64
                                + (0..n)
                                    .map(|i| p.weight[o * n + i] as f64 * v[i])
                                    .sum::<f64>()
                        })
                        .collect(),
                );
            }
            Layer::Softmax => {
                let v = flat.as_ref().unwrap();
                let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = v.iter().map(|a| (a - m).exp()).collect();
                let s: f64 = e.iter().sum();
                return e.iter().map(|a| a / s).collect();
            }
        }
    }
    unreachable!("networks end in softmax")
}

fn random_network(rng: &mut ChaCha8Rng) -> Network {
    let shape = Shape::new(
        rng.random_range(1..=3),
        rng.random_range(4..=9),
        rng.random_range(4..=9),
    );
    let k = rng.random_range(2..=6);
    let mut layers = Vec::new();
    // Depth counts parametrised and pooling layers, at most 4.
    let mut depth = 0;
    let (mut h, mut w) = (shape.height, shape.width);
    if rng.random_bool(0.6) {
        let kernel = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let padding = rng.random_range(0..=1);
        layers.push(Layer::Conv2d {
            out_channels: rng.random_range(1..=4),
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
        });
        h = (h + 2 * padding - kernel) / stride + 1;
        w = (w + 2 * padding - kernel) / stride + 1;
        layers.push(Layer::Relu);
        depth += 1;
    }
    if rng.random_bool(0.5) && h >= 2 && w >= 2 {
        layers.push(Layer::MaxPool2d {
            kernel: 2,
            stride: 2,
        });
        depth += 1;
    }
    layers.push(Layer::Flatten);
    if depth < 3 && rng.random_bool(0.5) {
        layers.push(Layer::Dense {
            out_features: rng.random_range(2..=12),
        });
        layers.push(Layer::Relu);
    }
    layers.push(Layer::Dense { out_features: k });
    layers.push(Layer::Softmax);
    let description = NetworkDescription {
        input_shape: shape,
        num_classes: k,
        layers,
    };
    let slots = description.tensor_slots().unwrap();
    let mut params = vec![LayerParams::default(); description.layers.len()];
    for slot in slots {
        let v: Vec<f32> = (0..slot.len())
            .map(|_| rng.random_range(-0.5f32..0.5))
            .collect();
        if slot.name == "weight" {
            params[slot.layer].weight = v;
        } else {
            params[slot.layer].bias = v;
        }
    }
    Network::new(description, params).unwrap()
}

fn random_image(rng: &mut ChaCha8Rng, shape: Shape) -> ImageTensor {
    ImageTensor::new(
        shape,
        (0..shape.len()).map(|_| rng.random::<f32>()).collect(),
    )
    .unwrap()
}

#[test]
fn forward_pass_matches_naive_reference_on_random_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..100 {
        let net = random_network(&mut rng);
        for _ in 0..5 {
            let x = random_image(&mut rng, net.input_shape());
            let got = net.forward(&x).unwrap();
            let want = naive_forward(&net, &x);
            for (g, w) in got.values().iter().zip(&want) {
                assert!(
                    (g - w).abs() < 1e-6,
                    "{}: {g} vs {w}",
                    net.description().summary()
                );
            }
        }
    }
}

#[test]
fn weight_file_round_trip_preserves_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let dir = tempfile::tempdir().unwrap();
    let net = random_network(&mut rng);
    let path = dir.path().join("net.ccw1");
    save_weights(&net, &path).unwrap();
    let loaded = load_weights(&path).unwrap();
    let handle = ClassifierHandle::load(&path).unwrap();
    for _ in 0..100 {
        let x = random_image(&mut rng, net.input_shape());
        let a = net.predict(&x).unwrap();
        assert_eq!(a, loaded.predict(&x).unwrap());
        assert_eq!(a, handle.predict(&x).unwrap());
    }
}

#[test]
fn bright_first_pixel_selects_class_zero() {
    let shape = Shape::new(1, 2, 2);
    let mut weight = vec![0.0f32; 3 * 4];
    weight[0] = 10.0;
    let net = common::linear_net(shape, 3, weight, vec![0.0; 3]);
    let x = ImageTensor::new(shape, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let p = net.predict(&x).unwrap();
    assert_eq!(p.predicted_class(), 0);
    // e^10 / (e^10 + 2)
    let want = 1.0 / (1.0 + 2.0 * (-10f64).exp());
    assert!((p.values()[0] - want).abs() < 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_equals_single_calls(seed in any::<u64>(), b in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_network(&mut rng);
        let batch: Vec<ImageTensor> = (0..b).map(|_| random_image(&mut rng, net.input_shape())).collect();
        let out = net.predict_batch(&batch).unwrap();
        prop_assert_eq!(out.len(), b);
        for (x, p) in batch.iter().zip(&out) {
            let single = net.predict(x).unwrap();
            for (u, v) in p.values().iter().zip(single.values()) {
                prop_assert!((u - v).abs() <= 1e-7);
            }
        }
    }

    #[test]
    fn softmax_is_valid_and_shift_invariant(
        z in prop::collection::vec(-50.0f64..50.0, 2..12),
        c in -500.0f64..500.0,
    ) {
        let p = softmax(&z).unwrap();
        let sum: f64 = p.values().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-7);
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let q = softmax(&shifted).unwrap();
        for (a, b) in p.values().iter().zip(q.values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn outputs_are_probability_vectors_of_length_k(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = random_network(&mut rng);
        let x = random_image(&mut rng, net.input_shape());
        let p = net.predict(&x).unwrap();
        prop_assert_eq!(p.num_classes(), net.num_classes());
    }
}
