//! Procedural stand-in for a face-expression dataset.
//!
//! Class `c` is drawn as a mirrored pair of bars (an "X" whose opening angle
//! depends on `c`) plus a blob whose height depends on `c`. Both parts are
//! symmetric under a horizontal flip, so flipping is label-preserving just as
//! it is for faces. `variation` scales rotation, translation, stroke jitter and
//! pixel noise; at `variation = 0` every image of a class is the template.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Dataset, Sample, SplitTag};
use crate::error::{Error, Result};

pub const MIN_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
    pub variation: f64,
    pub seed: u64,
}

/// Max rotation (radians) at `variation = 1`.
const MAX_ROTATION: f64 = 40.0 * PI / 180.0;
/// Max translation as a fraction of the half-extent at `variation = 1`.
const MAX_SHIFT: f64 = 0.35;
/// Pixel noise standard deviation at `variation = 1`.
const MAX_PIXEL_NOISE: f64 = 0.35;

pub fn generate_toy_dataset(spec: &ToySpec) -> Result<Dataset> {
    if spec.num_classes < 2 {
        return Err(Error::invalid(format!(
            "num_classes must satisfy C >= 2, got {}",
            spec.num_classes
        )));
    }
    if spec.num_classes > 256 {
        return Err(Error::invalid("num_classes must satisfy C <= 256"));
    }
    if spec.per_class < 1 {
        return Err(Error::invalid("per_class must be at least 1"));
    }
    if spec.height < MIN_SIDE || spec.width < MIN_SIDE {
        return Err(Error::invalid(format!(
            "image dimensions must be at least {MIN_SIDE}px, got {}x{}",
            spec.height, spec.width
        )));
    }
    if !(0.0..=1.0).contains(&spec.variation) {
        return Err(Error::invalid("variation must lie in [0, 1]"));
    }
    let total = spec.num_classes * spec.per_class;
    if total > u32::MAX as usize {
        return Err(Error::invalid("too many samples"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = Vec::with_capacity(total);
    for c in 0..spec.num_classes {
        for _ in 0..spec.per_class {
            let jitter = Jitter::draw(&mut rng, spec.variation);
            let pixels = render(c, spec, &jitter, &mut rng);
            samples.push(Sample {
                id: samples.len() as u32,
                true_label: c as u8,
                train_label: c as u8,
                pixels,
            });
        }
    }
    Dataset::new(
        samples,
        spec.num_classes,
        spec.height,
        spec.width,
        SplitTag::Train,
    )
}

struct Jitter {
    rotation: f64,
    shift_u: f64,
    shift_v: f64,
    stroke: f64,
    gain: f64,
    noise_sd: f64,
}

impl Jitter {
    fn draw(rng: &mut ChaCha8Rng, variation: f64) -> Self {
        let mut sym = || rng.random_range(-1.0..=1.0);
        Jitter {
            rotation: sym() * variation * MAX_ROTATION,
            shift_u: sym() * variation * MAX_SHIFT,
            shift_v: sym() * variation * MAX_SHIFT,
            stroke: 1.0 + 0.4 * sym() * variation,
            gain: 1.0 - 0.4 * variation * (sym() * 0.5 + 0.5),
            noise_sd: variation * MAX_PIXEL_NOISE,
        }
    }
}

fn render(class: usize, spec: &ToySpec, j: &Jitter, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let c = spec.num_classes as f64;
    let k = class as f64;
    // Bar pair opening angle in (0, pi/2), blob height in [-0.55, 0.55].
    let theta = (k + 0.5) * (PI / 2.0) / c;
    let blob_v = if spec.num_classes > 1 {
        -0.55 + 1.1 * k / (c - 1.0)
    } else {
        0.0
    };
    let bar_width = 0.09 * j.stroke;
    let blob_radius = 0.2 * j.stroke;
    let half_len = 0.75;
    let (sin_r, cos_r) = j.rotation.sin_cos();
    let bars = [theta, PI - theta].map(|a| a.sin_cos());

    let (h, w) = (spec.height as f64, spec.width as f64);
    let mut out = Vec::with_capacity(spec.height * spec.width);
    for y in 0..spec.height {
        for x in 0..spec.width {
            // Normalized coordinates in [-1, 1], y pointing down.
            let u0 = (x as f64 + 0.5) / (w / 2.0) - 1.0 - j.shift_u;
            let v0 = (y as f64 + 0.5) / (h / 2.0) - 1.0 - j.shift_v;
            let u = cos_r * u0 + sin_r * v0;
            let v = -sin_r * u0 + cos_r * v0;

            let mut value: f64 = 0.0;
            for &(s, co) in &bars {
                let along = u * co + v * s;
                let across = -u * s + v * co;
                if along.abs() <= half_len {
                    value = value.max((-(across / bar_width).powi(2)).exp());
                }
            }
            let d2 = u * u + (v - blob_v) * (v - blob_v);
            value = value.max((-d2 / (blob_radius * blob_radius)).exp());

            let noisy = value * j.gain
                + if j.noise_sd > 0.0 {
                    j.noise_sd * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
            out.push((noisy.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}
