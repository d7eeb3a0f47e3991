//! Parametric image transformations `T_θ`.
//!
//! A [`TransformSpec`] describes a parameter space `Θ`; [`sample_params`]
//! draws `θ` uniformly from it, [`grid_params`] enumerates a deterministic
//! discretization, and [`apply`] evaluates `T_θ(x)`.
//!
//! Geometric transforms sample the source image bilinearly around the
//! geometric center `((H−1)/2, (W−1)/2)`; source coordinates outside the
//! image contribute zero. Photometric results are clamped to `[0, 1]`.
//!
//! Text syntax (also used in report config echoes):
//!
//! ```text
//! rotation:LO:HI          degrees
//! translation:RHO         max displacement as a fraction of image width
//! scale:LO:HI             scalar resize factor
//! brightness:LO:HI        additive offset
//! contrast:LO:HI          multiplicative adjustment, factor = 1 + γ
//! blur:LO:HI              Gaussian σ (squared kernel radius), sampled uniformly
//! blur-radius:LO:HI       kernel radius, sampled uniformly; σ = radius²
//! awgn:LO:HI              additive white Gaussian noise standard deviation
//! compose(A,B,...)        children applied left to right
//! preset:NAME             a named parameter space, see [`preset`]
//! ```

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, Shape};
use crate::rng::{domain, substream};

/// Kernel truncation in standard deviations.
const BLUR_TRUNCATION: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TransformSpec {
    Rotation {
        lo: f64,
        hi: f64,
    },
    Translation {
        max_fraction: f64,
    },
    Scale {
        lo: f64,
        hi: f64,
    },
    Brightness {
        lo: f64,
        hi: f64,
    },
    Contrast {
        lo: f64,
        hi: f64,
    },
    /// `by_radius` selects uniform sampling of the kernel radius `√σ`
    /// instead of `σ`; `lo`/`hi` are in the sampled unit.
    GaussianBlur {
        lo: f64,
        hi: f64,
        by_radius: bool,
    },
    Awgn {
        lo: f64,
        hi: f64,
    },
    Composition(Vec<TransformSpec>),
}

/// A concrete `θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TransformParams {
    Rotation {
        degrees: f64,
    },
    /// Displacement in pixels; `dx` along the width axis.
    Translation {
        dx: f64,
        dy: f64,
    },
    Scale {
        factor: f64,
    },
    Brightness {
        offset: f64,
    },
    Contrast {
        gamma: f64,
    },
    GaussianBlur {
        sigma: f64,
    },
    /// The noise realisation is fixed by `noise_seed`.
    Awgn {
        sigma: f64,
        noise_seed: u64,
    },
    Composition(Vec<TransformParams>),
}

impl TransformSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        let check_range = |name: &str, lo: f64, hi: f64| -> Result<()> {
            if !lo.is_finite() || !hi.is_finite() {
                return bad(format!("{name} range [{lo}, {hi}] is not finite"));
            }
            if lo > hi {
                return bad(format!("{name} range [{lo}, {hi}] is empty"));
            }
            Ok(())
        };
        match *self {
            TransformSpec::Rotation { lo, hi } => check_range("rotation", lo, hi),
            TransformSpec::Translation { max_fraction } => {
                if !(0.0..1.0).contains(&max_fraction) {
                    return bad(format!(
                        "translation fraction {max_fraction} outside [0, 1)"
                    ));
                }
                Ok(())
            }
            TransformSpec::Scale { lo, hi } => {
                check_range("scale", lo, hi)?;
                if lo <= 0.0 {
                    return bad(format!("scale factors must be positive, got {lo}"));
                }
                Ok(())
            }
            TransformSpec::Brightness { lo, hi } => {
                check_range("brightness", lo, hi)?;
                if lo < -1.0 || hi > 1.0 {
                    return bad(format!("brightness range [{lo}, {hi}] outside [-1, 1]"));
                }
                Ok(())
            }
            TransformSpec::Contrast { lo, hi } => {
                check_range("contrast", lo, hi)?;
                if lo <= -1.0 {
                    return bad(format!("contrast adjustment must exceed -1, got {lo}"));
                }
                Ok(())
            }
            TransformSpec::GaussianBlur { lo, hi, .. } => {
                check_range("blur", lo, hi)?;
                if lo < 0.0 || hi <= 0.0 {
                    return bad(format!(
                        "blur range [{lo}, {hi}] must lie in [0, ∞) with a positive maximum"
                    ));
                }
                Ok(())
            }
            TransformSpec::Awgn { lo, hi } => {
                check_range("awgn", lo, hi)?;
                if lo < 0.0 || hi <= 0.0 {
                    return bad(format!(
                        "noise range [{lo}, {hi}] must lie in [0, ∞) with a positive maximum"
                    ));
                }
                Ok(())
            }
            TransformSpec::Composition(ref children) => {
                if children.len() < 2 {
                    return bad("composition needs at least 2 children".into());
                }
                for child in children {
                    if matches!(child, TransformSpec::Composition(_)) {
                        return bad("compositions cannot be nested".into());
                    }
                    child.validate()?;
                }
                Ok(())
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            TransformSpec::Rotation { .. } => "rotation",
            TransformSpec::Translation { .. } => "translation",
            TransformSpec::Scale { .. } => "scale",
            TransformSpec::Brightness { .. } => "brightness",
            TransformSpec::Contrast { .. } => "contrast",
            TransformSpec::GaussianBlur {
                by_radius: false, ..
            } => "blur",
            TransformSpec::GaussianBlur {
                by_radius: true, ..
            } => "blur-radius",
            TransformSpec::Awgn { .. } => "awgn",
            TransformSpec::Composition(_) => "compose",
        }
    }
}

pub const KINDS: &[&str] = &[
    "rotation",
    "translation",
    "scale",
    "brightness",
    "contrast",
    "blur",
    "blur-radius",
    "awgn",
    "compose",
    "preset",
];

/// Reference parameter spaces for MNIST and CIFAR-10 experiments, keyed by
/// `<dataset>-<transform>`.
pub fn preset(name: &str) -> Option<TransformSpec> {
    use TransformSpec::*;
    let rot = |a: f64| Rotation { lo: -a, hi: a };
    let bri = |a: f64| Brightness { lo: -a, hi: a };
    let con = |a: f64| Contrast { lo: -a, hi: a };
    let blur = GaussianBlur {
        lo: 0.0,
        hi: 9.0,
        by_radius: false,
    };
    let spec = match name {
        "cifar10-rotation" => rot(10.0),
        "mnist-rotation" => rot(50.0),
        "cifar10-translation" => Translation { max_fraction: 0.2 },
        "mnist-translation" => Translation { max_fraction: 0.3 },
        "cifar10-brightness" => bri(0.4),
        "mnist-brightness" => bri(0.5),
        "cifar10-contrast" => con(0.4),
        "mnist-contrast" => con(0.5),
        "cifar10-scale" | "mnist-scale" => Scale { lo: 0.7, hi: 1.3 },
        "mnist-scale-wide" => Scale { lo: 0.5, hi: 1.5 },
        "cifar10-blur" | "mnist-blur" => blur,
        "cifar10-blur-radius" | "mnist-blur-radius" => GaussianBlur {
            lo: 0.0,
            hi: 3.0,
            by_radius: true,
        },
        "cifar10-awgn" => Awgn {
            lo: 0.0,
            hi: 8.0 / 255.0,
        },
        "cifar10-contrast-brightness" => Composition(vec![con(0.4), bri(0.4)]),
        "mnist-contrast-brightness" => Composition(vec![con(0.5), bri(0.5)]),
        "cifar10-rotation-brightness" => Composition(vec![rot(10.0), bri(0.4)]),
        "mnist-rotation-brightness" => Composition(vec![rot(50.0), bri(0.5)]),
        "cifar10-scale-brightness" => Composition(vec![Scale { lo: 0.7, hi: 1.3 }, bri(0.4)]),
        "mnist-scale-brightness" => Composition(vec![Scale { lo: 0.7, hi: 1.3 }, bri(0.5)]),
        _ => return None,
    };
    Some(spec)
}

pub const PRESETS: &[&str] = &[
    "cifar10-rotation",
    "mnist-rotation",
    "cifar10-translation",
    "mnist-translation",
    "cifar10-brightness",
    "mnist-brightness",
    "cifar10-contrast",
    "mnist-contrast",
    "cifar10-scale",
    "mnist-scale",
    "mnist-scale-wide",
    "cifar10-blur",
    "mnist-blur",
    "cifar10-blur-radius",
    "mnist-blur-radius",
    "cifar10-awgn",
    "cifar10-contrast-brightness",
    "mnist-contrast-brightness",
    "cifar10-rotation-brightness",
    "mnist-rotation-brightness",
    "cifar10-scale-brightness",
    "mnist-scale-brightness",
];

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransformSpec::Translation { max_fraction } => {
                write!(f, "translation:{max_fraction:?}")
            }
            TransformSpec::Composition(children) => {
                write!(f, "compose(")?;
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{c}")?;
                }
                write!(f, ")")
            }
            TransformSpec::Rotation { lo, hi }
            | TransformSpec::Scale { lo, hi }
            | TransformSpec::Brightness { lo, hi }
            | TransformSpec::Contrast { lo, hi }
            | TransformSpec::GaussianBlur { lo, hi, .. }
            | TransformSpec::Awgn { lo, hi } => {
                write!(f, "{}:{lo:?}:{hi:?}", self.kind_name())
            }
        }
    }
}

impl FromStr for TransformSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let spec = parse_spec(s.trim())?;
        spec.validate()?;
        Ok(spec)
    }
}

impl TryFrom<String> for TransformSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TransformSpec> for String {
    fn from(spec: TransformSpec) -> Self {
        spec.to_string()
    }
}

fn parse_spec(s: &str) -> Result<TransformSpec> {
    let usage = || {
        Error::InvalidSpec(format!(
            "cannot parse transform `{s}`; known kinds: {}",
            KINDS.join(", ")
        ))
    };
    if let Some(rest) = s.strip_prefix("compose(") {
        let inner = rest.strip_suffix(')').ok_or_else(usage)?;
        let children = split_top_level(inner)
            .into_iter()
            .map(|part| parse_spec(part.trim()))
            .collect::<Result<Vec<_>>>()?;
        return Ok(TransformSpec::Composition(children));
    }
    let mut parts = s.split(':');
    let kind = parts.next().ok_or_else(usage)?;
    let args: Vec<&str> = parts.collect();
    if kind == "preset" {
        let name = args.first().ok_or_else(usage)?;
        return preset(name).ok_or_else(|| {
            Error::InvalidSpec(format!(
                "unknown preset `{name}`; known presets: {}",
                PRESETS.join(", ")
            ))
        });
    }
    let nums = args
        .iter()
        .map(|a| {
            a.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidSpec(format!("bad number `{a}` in transform `{s}`")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let range = |nums: &[f64]| -> Result<(f64, f64)> {
        match nums {
            [lo, hi] => Ok((*lo, *hi)),
            _ => Err(Error::InvalidSpec(format!(
                "transform `{s}` expects `{kind}:LO:HI`"
            ))),
        }
    };
    let spec = match kind {
        "rotation" => {
            let (lo, hi) = range(&nums)?;
            TransformSpec::Rotation { lo, hi }
        }
        "translation" => match nums[..] {
            [max_fraction] => TransformSpec::Translation { max_fraction },
            _ => {
                return Err(Error::InvalidSpec(format!(
                    "transform `{s}` expects `translation:RHO`"
                )))
            }
        },
        "scale" => {
            let (lo, hi) = range(&nums)?;
            TransformSpec::Scale { lo, hi }
        }
        "brightness" => {
            let (lo, hi) = range(&nums)?;
            TransformSpec::Brightness { lo, hi }
        }
        "contrast" => {
            let (lo, hi) = range(&nums)?;
            TransformSpec::Contrast { lo, hi }
        }
        "blur" | "blur-radius" => {
            let (lo, hi) = range(&nums)?;
            TransformSpec::GaussianBlur {
                lo,
                hi,
                by_radius: kind == "blur-radius",
            }
        }
        "awgn" => {
            let (lo, hi) = range(&nums)?;
            TransformSpec::Awgn { lo, hi }
        }
        _ => return Err(usage()),
    };
    Ok(spec)
}

fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        lo + (hi - lo) * rng.random::<f64>()
    }
}

/// Draws `θ` uniformly from the parameter space of `spec`. Translations are
/// uniform over the disk of radius `ρ·width`.
pub fn sample_params<R: Rng + ?Sized>(
    spec: &TransformSpec,
    shape: Shape,
    rng: &mut R,
) -> Result<TransformParams> {
    spec.validate()?;
    Ok(sample_validated(spec, shape, rng))
}

fn sample_validated<R: Rng + ?Sized>(
    spec: &TransformSpec,
    shape: Shape,
    rng: &mut R,
) -> TransformParams {
    match *spec {
        TransformSpec::Rotation { lo, hi } => TransformParams::Rotation {
            degrees: uniform(rng, lo, hi),
        },
        TransformSpec::Translation { max_fraction } => {
            let radius = max_fraction * shape.width as f64;
            let r = radius * rng.random::<f64>().sqrt();
            let angle = std::f64::consts::TAU * rng.random::<f64>();
            TransformParams::Translation {
                dx: r * angle.cos(),
                dy: r * angle.sin(),
            }
        }
        TransformSpec::Scale { lo, hi } => TransformParams::Scale {
            factor: uniform(rng, lo, hi),
        },
        TransformSpec::Brightness { lo, hi } => TransformParams::Brightness {
            offset: uniform(rng, lo, hi),
        },
        TransformSpec::Contrast { lo, hi } => TransformParams::Contrast {
            gamma: uniform(rng, lo, hi),
        },
        TransformSpec::GaussianBlur { lo, hi, by_radius } => {
            let v = uniform(rng, lo, hi);
            TransformParams::GaussianBlur {
                sigma: if by_radius { v * v } else { v },
            }
        }
        TransformSpec::Awgn { lo, hi } => TransformParams::Awgn {
            sigma: uniform(rng, lo, hi),
            noise_seed: rng.random(),
        },
        TransformSpec::Composition(ref children) => TransformParams::Composition(
            children
                .iter()
                .map(|c| sample_validated(c, shape, rng))
                .collect(),
        ),
    }
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (count - 1) as f64;
    (0..count)
        .map(|i| {
            if i == count - 1 {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect()
}

/// Deterministic discretization of `Θ` with (at most) `r` points per scalar
/// axis; compositions combine `⌈r^{1/c}⌉` points per child and keep at most
/// `r²` combinations.
pub fn grid_params(spec: &TransformSpec, shape: Shape, r: usize) -> Result<Vec<TransformParams>> {
    if r < 2 {
        return Err(Error::invalid(format!(
            "grid size must be at least 2, got {r}"
        )));
    }
    spec.validate()?;
    Ok(grid_validated(spec, shape, r))
}

fn grid_validated(spec: &TransformSpec, shape: Shape, r: usize) -> Vec<TransformParams> {
    match *spec {
        TransformSpec::Rotation { lo, hi } => linspace(lo, hi, r)
            .into_iter()
            .map(|degrees| TransformParams::Rotation { degrees })
            .collect(),
        TransformSpec::Translation { max_fraction } => {
            let radius = max_fraction * shape.width as f64;
            let directions = r - 1;
            let mut out = vec![TransformParams::Translation { dx: 0.0, dy: 0.0 }];
            out.extend((0..directions).map(|i| {
                let angle = std::f64::consts::TAU * i as f64 / directions as f64;
                TransformParams::Translation {
                    dx: radius * angle.cos(),
                    dy: radius * angle.sin(),
                }
            }));
            out
        }
        TransformSpec::Scale { lo, hi } => linspace(lo, hi, r)
            .into_iter()
            .map(|factor| TransformParams::Scale { factor })
            .collect(),
        TransformSpec::Brightness { lo, hi } => linspace(lo, hi, r)
            .into_iter()
            .map(|offset| TransformParams::Brightness { offset })
            .collect(),
        TransformSpec::Contrast { lo, hi } => linspace(lo, hi, r)
            .into_iter()
            .map(|gamma| TransformParams::Contrast { gamma })
            .collect(),
        TransformSpec::GaussianBlur { lo, hi, by_radius } => linspace(lo, hi, r)
            .into_iter()
            .map(|v| TransformParams::GaussianBlur {
                sigma: if by_radius { v * v } else { v },
            })
            .collect(),
        TransformSpec::Awgn { lo, hi } => linspace(lo, hi, r)
            .into_iter()
            .enumerate()
            .map(|(i, sigma)| TransformParams::Awgn {
                sigma,
                noise_seed: substream(0, domain::AWGN_GRID, i as u64, 0).random(),
            })
            .collect(),
        TransformSpec::Composition(ref children) => {
            let per_child = (r as f64).powf(1.0 / children.len() as f64).ceil() as usize;
            let per_child = per_child.max(2);
            let grids: Vec<Vec<TransformParams>> = children
                .iter()
                .map(|c| grid_validated(c, shape, per_child))
                .collect();
            let mut combos: Vec<Vec<TransformParams>> = vec![Vec::new()];
            for grid in &grids {
                combos = combos
                    .iter()
                    .flat_map(|prefix| {
                        grid.iter().map(move |p| {
                            let mut next = prefix.clone();
                            next.push(p.clone());
                            next
                        })
                    })
                    .collect();
            }
            combos.truncate(r * r);
            combos
                .into_iter()
                .map(TransformParams::Composition)
                .collect()
        }
    }
}

/// Evaluates `T_θ(x)`. Output has the input's shape and values in `[0, 1]`.
pub fn apply(params: &TransformParams, x: &ImageTensor) -> ImageTensor {
    let shape = x.shape();
    match *params {
        TransformParams::Brightness { offset } => map_pixels(x, |v| (v as f64 + offset) as f32),
        TransformParams::Contrast { gamma } => map_pixels(x, |v| (v as f64 * (1.0 + gamma)) as f32),
        TransformParams::Rotation { degrees } => {
            let (sin, cos) = degrees.to_radians().sin_cos();
            let (cy, cx) = center(shape);
            // Inverse map: rotate output coordinates by −φ into the source.
            warp(x, |y, xx| {
                let (dy, dx) = (y - cy, xx - cx);
                (cy - sin * dx + cos * dy, cx + cos * dx + sin * dy)
            })
        }
        TransformParams::Translation { dx, dy } => warp(x, |y, xx| (y - dy, xx - dx)),
        TransformParams::Scale { factor } => {
            let (cy, cx) = center(shape);
            warp(x, |y, xx| (cy + (y - cy) / factor, cx + (xx - cx) / factor))
        }
        TransformParams::GaussianBlur { sigma } => gaussian_blur(x, sigma),
        TransformParams::Awgn { sigma, noise_seed } => {
            if sigma <= 0.0 {
                return x.clone();
            }
            let normal = Normal::new(0.0, sigma).expect("positive finite sigma");
            let mut rng = substream(noise_seed, domain::AWGN_NOISE, 0, 0);
            map_pixels(x, |v| (v as f64 + normal.sample(&mut rng)) as f32)
        }
        TransformParams::Composition(ref children) => {
            let mut out = x.clone();
            for child in children {
                out = apply(child, &out);
            }
            out
        }
    }
}

fn map_pixels(x: &ImageTensor, mut f: impl FnMut(f32) -> f32) -> ImageTensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    ImageTensor::from_clamped(x.shape(), data)
}

fn center(shape: Shape) -> (f64, f64) {
    (
        (shape.height as f64 - 1.0) / 2.0,
        (shape.width as f64 - 1.0) / 2.0,
    )
}

/// Resamples `x` with `source(y, x) -> (sy, sx)` giving, for each output
/// pixel, the source coordinate to read bilinearly.
fn warp(x: &ImageTensor, source: impl Fn(f64, f64) -> (f64, f64)) -> ImageTensor {
    let shape = x.shape();
    let (h, w) = (shape.height, shape.width);
    let mut out = vec![0f32; shape.len()];
    for oy in 0..h {
        for ox in 0..w {
            let (sy, sx) = source(oy as f64, ox as f64);
            if !sy.is_finite() || !sx.is_finite() {
                continue;
            }
            let y0 = sy.floor();
            let x0 = sx.floor();
            let fy = sy - y0;
            let fx = sx - x0;
            let taps = [
                (y0, x0, (1.0 - fy) * (1.0 - fx)),
                (y0, x0 + 1.0, (1.0 - fy) * fx),
                (y0 + 1.0, x0, fy * (1.0 - fx)),
                (y0 + 1.0, x0 + 1.0, fy * fx),
            ];
            for c in 0..shape.channels {
                let mut acc = 0.0f64;
                for &(ty, tx, wgt) in &taps {
                    if wgt == 0.0 || ty < 0.0 || tx < 0.0 || ty >= h as f64 || tx >= w as f64 {
                        continue;
                    }
                    acc += wgt * x.get(c, ty as usize, tx as usize) as f64;
                }
                out[(c * h + oy) * w + ox] = acc as f32;
            }
        }
    }
    ImageTensor::from_clamped(shape, out)
}

/// Normalized 1-D kernel `∝ exp(−k²/(2σ))` on `k ∈ [−R, R]`, `R = ⌈3√σ⌉`.
pub fn blur_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (BLUR_TRUNCATION * sigma.sqrt()).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

fn gaussian_blur(x: &ImageTensor, sigma: f64) -> ImageTensor {
    if sigma <= 0.0 {
        return x.clone();
    }
    let kernel = blur_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let shape = x.shape();
    let (h, w) = (shape.height as isize, shape.width as isize);
    let src: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let mut tmp = vec![0f64; src.len()];
    let mut out = vec![0f32; src.len()];
    for c in 0..shape.channels as isize {
        let plane = (c * h * w) as usize;
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sx = xx + ki as isize - radius;
                    if (0..w).contains(&sx) {
                        acc += kv * src[plane + (y * w + sx) as usize];
                    }
                }
                tmp[plane + (y * w + xx) as usize] = acc;
            }
        }
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sy = y + ki as isize - radius;
                    if (0..h).contains(&sy) {
                        acc += kv * tmp[plane + (sy * w + xx) as usize];
                    }
                }
                out[plane + (y * w + xx) as usize] = acc as f32;
            }
        }
    }
    ImageTensor::from_clamped(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn ramp(shape: Shape) -> ImageTensor {
        let n = shape.len();
        let data = (0..n).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        ImageTensor::new(shape, data).unwrap()
    }

    #[test]
    fn parse_and_display_round_trip() {
        for text in [
            "rotation:-10.0:10.0",
            "translation:0.2",
            "scale:0.7:1.3",
            "brightness:-0.4:0.4",
            "contrast:-0.5:0.5",
            "blur:0.0:9.0",
            "blur-radius:0.0:3.0",
            "awgn:0.0:0.03",
            "compose(rotation:-10.0:10.0,brightness:-0.4:0.4)",
        ] {
            let spec: TransformSpec = text.parse().unwrap();
            assert_eq!(spec.to_string(), text);
            assert_eq!(spec.to_string().parse::<TransformSpec>().unwrap(), spec);
        }
        let p: TransformSpec = "preset:cifar10-rotation".parse().unwrap();
        assert_eq!(
            p,
            TransformSpec::Rotation {
                lo: -10.0,
                hi: 10.0
            }
        );
    }

    #[test]
    fn parse_rejects_bad_specs() {
        let err = "shear:0:1"
            .parse::<TransformSpec>()
            .unwrap_err()
            .to_string();
        assert!(err.contains("rotation"), "{err}");
        assert!("rotation:5:-5".parse::<TransformSpec>().is_err());
        assert!("translation:1.0".parse::<TransformSpec>().is_err());
        assert!("scale:0:1".parse::<TransformSpec>().is_err());
        assert!("brightness:-2:0".parse::<TransformSpec>().is_err());
        assert!("contrast:-1:0".parse::<TransformSpec>().is_err());
        assert!("compose(rotation:0:1)".parse::<TransformSpec>().is_err());
        assert!("compose(rotation:0:1,compose(brightness:0:1,contrast:0:1))"
            .parse::<TransformSpec>()
            .is_err());
        assert!("preset:nope".parse::<TransformSpec>().is_err());
        for name in PRESETS {
            assert!(preset(name).unwrap().validate().is_ok(), "{name}");
        }
    }

    #[test]
    fn sampling_examples() {
        let shape = Shape::new(1, 32, 32);
        let mut rng = substream(1, 0, 0, 0);
        let b = TransformSpec::Brightness { lo: -0.4, hi: 0.4 };
        for _ in 0..1000 {
            match sample_params(&b, shape, &mut rng).unwrap() {
                TransformParams::Brightness { offset } => assert!((-0.4..=0.4).contains(&offset)),
                other => panic!("{other:?}"),
            }
        }
        let r = TransformSpec::Rotation { lo: 0.0, hi: 0.0 };
        assert_eq!(
            sample_params(&r, shape, &mut rng).unwrap(),
            TransformParams::Rotation { degrees: 0.0 }
        );
        let t = TransformSpec::Translation { max_fraction: 0.2 };
        for _ in 0..10_000 {
            match sample_params(&t, shape, &mut rng).unwrap() {
                TransformParams::Translation { dx, dy } => {
                    assert!((dx * dx + dy * dy).sqrt() <= 6.4 + 1e-12)
                }
                other => panic!("{other:?}"),
            }
        }
        let empty = TransformSpec::Rotation { lo: 1.0, hi: 0.0 };
        assert!(matches!(
            sample_params(&empty, shape, &mut rng),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn grid_examples() {
        let shape = Shape::new(1, 8, 8);
        let g = grid_params(
            &TransformSpec::Rotation {
                lo: -10.0,
                hi: 10.0,
            },
            shape,
            5,
        )
        .unwrap();
        let angles: Vec<f64> = g
            .iter()
            .map(|p| match p {
                TransformParams::Rotation { degrees } => *degrees,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(angles, vec![-10.0, -5.0, 0.0, 5.0, 10.0]);

        let g = grid_params(&TransformSpec::Brightness { lo: -0.5, hi: 0.5 }, shape, 2).unwrap();
        assert_eq!(
            g,
            vec![
                TransformParams::Brightness { offset: -0.5 },
                TransformParams::Brightness { offset: 0.5 }
            ]
        );
        assert!(grid_params(&TransformSpec::Brightness { lo: -0.5, hi: 0.5 }, shape, 1).is_err());

        let t = grid_params(
            &TransformSpec::Translation { max_fraction: 0.25 },
            shape,
            20,
        )
        .unwrap();
        assert_eq!(t.len(), 20);
        assert_eq!(t[0], TransformParams::Translation { dx: 0.0, dy: 0.0 });
        for p in &t[1..] {
            let TransformParams::Translation { dx, dy } = p else {
                unreachable!()
            };
            assert!(((dx * dx + dy * dy).sqrt() - 2.0).abs() < 1e-12);
        }

        let comp: TransformSpec = "compose(rotation:-10:10,brightness:-0.4:0.4)"
            .parse()
            .unwrap();
        let g = grid_params(&comp, shape, 20).unwrap();
        assert_eq!(g.len(), 25);
        assert!(g.len() <= 400);
        assert_eq!(g, grid_params(&comp, shape, 20).unwrap());
    }

    #[test]
    fn identities_are_exact() {
        let x = ramp(Shape::new(3, 7, 9));
        for p in [
            TransformParams::Brightness { offset: 0.0 },
            TransformParams::Contrast { gamma: 0.0 },
            TransformParams::Rotation { degrees: 0.0 },
            TransformParams::Translation { dx: 0.0, dy: 0.0 },
            TransformParams::Scale { factor: 1.0 },
            TransformParams::GaussianBlur { sigma: 0.0 },
            TransformParams::Awgn {
                sigma: 0.0,
                noise_seed: 3,
            },
        ] {
            assert_eq!(apply(&p, &x), x, "{p:?}");
        }
    }

    #[test]
    fn integer_translation_is_a_shift() {
        let shape = Shape::new(2, 5, 6);
        let x = ramp(shape);
        let y = apply(&TransformParams::Translation { dx: 3.0, dy: 0.0 }, &x);
        for c in 0..2 {
            for r in 0..5 {
                for col in 0..6 {
                    let expected = if col >= 3 { x.get(c, r, col - 3) } else { 0.0 };
                    assert_eq!(y.get(c, r, col), expected);
                }
            }
        }
        let y = apply(&TransformParams::Translation { dx: 0.0, dy: -2.0 }, &x);
        for r in 0..5 {
            let expected = if r + 2 < 5 { x.get(0, r + 2, 1) } else { 0.0 };
            assert_eq!(y.get(0, r, 1), expected);
        }
    }

    #[test]
    fn rotation_by_quarter_turn_permutes_pixels() {
        let shape = Shape::new(1, 5, 5);
        let x = ramp(shape);
        let y = apply(&TransformParams::Rotation { degrees: 90.0 }, &x);
        let back = apply(&TransformParams::Rotation { degrees: -90.0 }, &y);
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
        // Center pixel is fixed.
        assert!((y.get(0, 2, 2) - x.get(0, 2, 2)).abs() < 1e-6);
    }

    #[test]
    fn downscale_zero_pads_and_upscale_crops() {
        let shape = Shape::new(1, 9, 9);
        let x = ImageTensor::filled(shape, 1.0).unwrap();
        let small = apply(&TransformParams::Scale { factor: 0.5 }, &x);
        assert_eq!(small.get(0, 0, 0), 0.0);
        assert_eq!(small.get(0, 4, 4), 1.0);
        let big = apply(&TransformParams::Scale { factor: 2.0 }, &x);
        assert!(big.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn blur_preserves_constant_interior() {
        let shape = Shape::new(1, 16, 16);
        let c = 0.37f32;
        let x = ImageTensor::filled(shape, c).unwrap();
        let sigma = 2.0;
        let y = apply(&TransformParams::GaussianBlur { sigma }, &x);
        let radius = (3.0 * f64::sqrt(sigma)).ceil() as usize;
        // Brute-force 2-D convolution with the product kernel.
        let k = blur_kernel(sigma);
        for r in radius..16 - radius {
            for col in radius..16 - radius {
                let mut acc = 0.0;
                for (i, ki) in k.iter().enumerate() {
                    for (j, kj) in k.iter().enumerate() {
                        acc += ki * kj * x.get(0, r + i - radius, col + j - radius) as f64;
                    }
                }
                assert!((acc - c as f64).abs() < 1e-6);
                assert!((y.get(0, r, col) - c).abs() < 1e-6);
            }
        }
        assert!(y.get(0, 0, 0) < c);
    }

    #[test]
    fn blur_kernel_is_normalized() {
        for i in 1..=90 {
            let sigma = i as f64 * 0.1;
            let s: f64 = blur_kernel(sigma).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        assert_eq!(blur_kernel(1.0).len(), 7);
    }

    #[test]
    fn awgn_is_reproducible_from_seed() {
        let x = ImageTensor::filled(Shape::new(1, 4, 4), 0.5).unwrap();
        let p = TransformParams::Awgn {
            sigma: 0.1,
            noise_seed: 42,
        };
        assert_eq!(apply(&p, &x), apply(&p, &x));
        let q = TransformParams::Awgn {
            sigma: 0.1,
            noise_seed: 43,
        };
        assert_ne!(apply(&p, &x), apply(&q, &x));
    }

    #[test]
    fn photometric_clamps() {
        let x = ImageTensor::filled(Shape::new(1, 2, 2), 0.8).unwrap();
        assert!(apply(&TransformParams::Brightness { offset: 0.5 }, &x)
            .data()
            .iter()
            .all(|&v| v == 1.0));
        assert!(apply(&TransformParams::Contrast { gamma: -0.5 }, &x)
            .data()
            .iter()
            .all(|&v| (v - 0.4).abs() < 1e-7));
    }
}
