//! Weak (pad-crop-flip) and strong (two random transforms) views of a
//! training image. Randomness comes from a per-sample stream keyed on
//! `(global_seed, epoch, sample_id)`, so results do not depend on the order
//! or thread in which samples are processed.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} pixels for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn from_u8(height: usize, width: usize, pixels: &[u8]) -> Self {
        assert_eq!(pixels.len(), height * width);
        Image {
            height,
            width,
            data: pixels.iter().map(|&p| p as f32 / 255.0).collect(),
        }
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Image {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Edge-replicating lookup for possibly out-of-range coordinates.
    #[inline]
    fn at_clamped(&self, y: isize, x: isize) -> f32 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.at(y, x)
    }

    fn map_coords(&self, f: impl Fn(usize, usize) -> (isize, isize)) -> Image {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                let (sy, sx) = f(y, x);
                data.push(self.at_clamped(sy, sx));
            }
        }
        Image { data, ..*self }
    }

    fn map_values(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    fn clamp_unit(mut self) -> Image {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }
}

/// Seed material for one sample in one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AugmentStream {
    pub global_seed: u64,
    pub epoch: u32,
    pub sample_id: u32,
}

#[derive(Clone, Copy)]
enum Purpose {
    Weak = 0,
    Strong = 1,
}

impl AugmentStream {
    pub fn new(global_seed: u64, epoch: u32, sample_id: u32) -> Self {
        AugmentStream {
            global_seed,
            epoch,
            sample_id,
        }
    }

    // ChaCha streams are independent by construction; the (epoch, id, purpose)
    // triple is packed injectively into the 64-bit stream number.
    fn rng(&self, purpose: Purpose) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.global_seed);
        let stream = ((self.epoch as u64 & 0x7FFF_FFFF) << 33)
            | ((self.sample_id as u64) << 1)
            | purpose as u64;
        rng.set_stream(stream);
        rng
    }
}

pub const CROP_PAD: usize = 4;

/// Crop offset (in the padded frame) and flip decision of a weak view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeakParams {
    pub offset_y: usize,
    pub offset_x: usize,
    pub flip: bool,
}

impl WeakParams {
    pub fn draw(stream: &AugmentStream) -> Self {
        let mut rng = stream.rng(Purpose::Weak);
        WeakParams {
            offset_y: rng.random_range(0..=2 * CROP_PAD),
            offset_x: rng.random_range(0..=2 * CROP_PAD),
            flip: rng.random_bool(0.5),
        }
    }
}

/// Pad by 4 pixels (edge replication), random crop back to size, then a
/// horizontal flip with probability 0.5.
pub fn weak_augment(image: &Image, stream: &AugmentStream) -> Image {
    weak_with(image, WeakParams::draw(stream))
}

pub fn weak_with(image: &Image, p: WeakParams) -> Image {
    let pad = CROP_PAD as isize;
    let w = image.width;
    image.map_coords(|y, x| {
        let cx = if p.flip { w - 1 - x } else { x };
        (
            y as isize + p.offset_y as isize - pad,
            cx as isize + p.offset_x as isize - pad,
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Rotate,
    TranslateX,
    TranslateY,
    Contrast,
    Brightness,
    Invert,
    ShearX,
}

impl TransformKind {
    pub const ALL: [TransformKind; 7] = [
        TransformKind::Rotate,
        TransformKind::TranslateX,
        TransformKind::TranslateY,
        TransformKind::Contrast,
        TransformKind::Brightness,
        TransformKind::Invert,
        TransformKind::ShearX,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Rotate => "rotate",
            TransformKind::TranslateX => "translate_x",
            TransformKind::TranslateY => "translate_y",
            TransformKind::Contrast => "contrast",
            TransformKind::Brightness => "brightness",
            TransformKind::Invert => "invert",
            TransformKind::ShearX => "shear_x",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown transform `{s}`")))
    }
}

pub const MAX_ROTATE_DEG: f32 = 30.0;
pub const MAX_TRANSLATE_FRAC: f32 = 0.2;
pub const MAX_SHEAR: f32 = 0.3;
pub const MAX_CONTRAST_DELTA: f32 = 0.5;
pub const MAX_BRIGHTNESS: f32 = 0.3;

/// One photometric or geometric transform. `magnitude` in `[0, 1]` scales the
/// transform's range; `negative` selects the direction of signed transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub magnitude: f32,
    pub negative: bool,
}

impl TransformSpec {
    pub fn new(kind: TransformKind, magnitude: f32) -> Result<Self> {
        if !(0.0..=1.0).contains(&magnitude) {
            return Err(Error::invalid(format!(
                "transform magnitude {magnitude} outside [0, 1]"
            )));
        }
        Ok(TransformSpec {
            kind,
            magnitude,
            negative: false,
        })
    }

    pub fn parse(name: &str, magnitude: f32) -> Result<Self> {
        Self::new(name.parse()?, magnitude)
    }

    pub fn negated(self) -> Self {
        TransformSpec {
            negative: !self.negative,
            ..self
        }
    }

    fn signed(&self, max: f32) -> f32 {
        let v = self.magnitude * max;
        if self.negative {
            -v
        } else {
            v
        }
    }
}

/// Applies a single transform. Geometric transforms use nearest-neighbour
/// sampling with edge replication; the result is clamped to `[0, 1]`.
pub fn apply_transform(image: &Image, t: &TransformSpec) -> Image {
    let (h, w) = (image.height, image.width);
    let cy = (h as f32 - 1.0) / 2.0;
    let cx = (w as f32 - 1.0) / 2.0;
    let out = match t.kind {
        TransformKind::Rotate => {
            let (s, c) = t.signed(MAX_ROTATE_DEG).to_radians().sin_cos();
            image.map_coords(|y, x| {
                let (dy, dx) = (y as f32 - cy, x as f32 - cx);
                // Inverse rotation: output pixel pulls from the source frame.
                let sx = c * dx + s * dy + cx;
                let sy = -s * dx + c * dy + cy;
                (sy.round() as isize, sx.round() as isize)
            })
        }
        TransformKind::TranslateX => {
            let shift = (t.signed(MAX_TRANSLATE_FRAC) * w as f32).round() as isize;
            image.map_coords(|y, x| (y as isize, x as isize - shift))
        }
        TransformKind::TranslateY => {
            let shift = (t.signed(MAX_TRANSLATE_FRAC) * h as f32).round() as isize;
            image.map_coords(|y, x| (y as isize - shift, x as isize))
        }
        TransformKind::ShearX => {
            let shear = t.signed(MAX_SHEAR);
            image.map_coords(|y, x| {
                let sx = x as f32 - shear * (y as f32 - cy);
                (y as isize, sx.round() as isize)
            })
        }
        TransformKind::Contrast => {
            let delta = t.signed(MAX_CONTRAST_DELTA);
            let mean = image.data.iter().sum::<f32>() / image.data.len() as f32;
            image.map_values(|v| v + delta * (v - mean))
        }
        TransformKind::Brightness => {
            let shift = t.signed(MAX_BRIGHTNESS);
            image.map_values(|v| v + shift)
        }
        TransformKind::Invert => image.map_values(|v| 1.0 - v),
    };
    out.clamp_unit()
}

pub const STRONG_OPS: usize = 2;

/// The transforms a strong view applies, in order.
pub fn draw_strong_ops(stream: &AugmentStream) -> [TransformSpec; STRONG_OPS] {
    let mut rng = stream.rng(Purpose::Strong);
    std::array::from_fn(|_| {
        let kind = TransformKind::ALL[rng.random_range(0..TransformKind::ALL.len())];
        let magnitude: f32 = rng.random();
        TransformSpec {
            kind,
            magnitude,
            negative: rng.random_bool(0.5),
        }
    })
}

/// Two transforms drawn uniformly with replacement, random magnitudes.
pub fn strong_augment(image: &Image, stream: &AugmentStream) -> Image {
    draw_strong_ops(stream)
        .iter()
        .fold(image.clone(), |img, t| apply_transform(&img, t))
}
