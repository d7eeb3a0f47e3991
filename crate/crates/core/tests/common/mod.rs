//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use cccert::classifier::{Layer, LayerParams, Network, NetworkDescription};
use cccert::Shape;

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const GK_GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_KRONROD_WEIGHTS[7] * fc;
    let mut gauss = GK_GAUSS_WEIGHTS[3] * fc;
    for i in 0..7 {
        let s = f(c - h * GK_NODES[i]) + f(c + h * GK_NODES[i]);
        kronrod += GK_KRONROD_WEIGHTS[i] * s;
        if i % 2 == 1 {
            gauss += GK_GAUSS_WEIGHTS[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) quadrature to absolute tolerance `tol`,
/// floored at roundoff relative to `∫|f|`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn go(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol || depth >= 30 {
            return v;
        }
        let m = 0.5 * (a + b);
        go(f, a, m, tol / 2.0, depth + 1) + go(f, m, b, tol / 2.0, depth + 1)
    }
    let scale = gk15(&|x| f(x).abs(), a, b).0;
    go(f, a, b, tol.max(1e-15 * scale), 0)
}

/// Mean, variance and third central moment of `e^{tX}`, `X ~ U(0, 1)`, by
/// quadrature.
pub fn quad_exp_moments(t: f64) -> (f64, f64, f64) {
    let mu = integrate(&|x| (t * x).exp(), 0.0, 1.0, 1e-15 * (t.abs().exp()));
    let s2 = integrate(&|x| ((t * x).exp() - mu).powi(2), 0.0, 1.0, 1e-16 * mu * mu);
    let rho = integrate(
        &|x| ((t * x).exp() - mu).powi(3),
        0.0,
        1.0,
        1e-16 * mu.powi(3),
    );
    (mu, s2, rho)
}

/// Flatten → Dense(k) → Softmax with explicit weights.
pub fn linear_net(shape: Shape, k: usize, weight: Vec<f32>, bias: Vec<f32>) -> Network {
    let d = NetworkDescription {
        input_shape: shape,
        num_classes: k,
        layers: vec![
            Layer::Flatten,
            Layer::Dense { out_features: k },
            Layer::Softmax,
        ],
    };
    Network::new(
        d,
        vec![
            LayerParams::default(),
            LayerParams { weight, bias },
            LayerParams::default(),
        ],
    )
    .unwrap()
}
