//! Labeled grayscale image collections, synthetic label noise and
//! class balancing.

mod ncds;
mod noise;
mod toy;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use ncds::{load_dataset, read_ncds, save_dataset, sidecar_path, write_ncds};
pub use noise::{inject_asymmetric_noise, inject_symmetric_noise, ConfusionPairs, RAFDB_CLASSES};
pub use toy::{generate_toy_dataset, ToySpec, MIN_SIDE};

/// One labeled image. Pixels are stored on the 8-bit grid (`intensity * 255`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: u32,
    pub true_label: u8,
    pub train_label: u8,
    pub pixels: Vec<u8>,
}

impl Sample {
    /// Pixel intensities in `[0, 1]`.
    pub fn intensities(&self) -> impl Iterator<Item = f32> + '_ {
        self.pixels.iter().map(|&p| p as f32 / 255.0)
    }

    pub fn is_noisy(&self) -> bool {
        self.true_label != self.train_label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        })
    }
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(SplitTag::Train),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub split: SplitTag,
}

impl Dataset {
    /// Builds a dataset after checking every structural invariant.
    pub fn new(
        samples: Vec<Sample>,
        num_classes: usize,
        height: usize,
        width: usize,
        split: SplitTag,
    ) -> Result<Self> {
        let d = Dataset {
            samples,
            num_classes,
            height,
            width,
            split,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid(format!(
                "num_classes must satisfy C >= 2, got {}",
                self.num_classes
            )));
        }
        if self.num_classes > 256 {
            return Err(Error::invalid("num_classes must fit in one byte (C <= 256)"));
        }
        let pixels = self.height * self.width;
        let mut ids = std::collections::HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            if s.pixels.len() != pixels {
                return Err(Error::Shape(format!(
                    "sample {} has {} pixels, expected {}x{}",
                    s.id,
                    s.pixels.len(),
                    self.height,
                    self.width
                )));
            }
            if s.true_label as usize >= self.num_classes || s.train_label as usize >= self.num_classes
            {
                return Err(Error::invalid(format!(
                    "sample {} has a label outside 0..{}",
                    s.id, self.num_classes
                )));
            }
            if !ids.insert(s.id) {
                return Err(Error::invalid(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.height * self.width
    }

    /// Number of noisy samples (`train_label != true_label`).
    pub fn noisy_count(&self) -> usize {
        self.samples.iter().filter(|s| s.is_noisy()).count()
    }

    /// Fraction of samples whose training label differs from the true label.
    pub fn noise_rate(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.noisy_count() as f64 / self.samples.len() as f64
    }

    pub fn train_label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.train_label as usize] += 1;
        }
        counts
    }

    pub fn true_label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.true_label as usize] += 1;
        }
        counts
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }

    fn require_train(&self, op: &str) -> Result<()> {
        if self.split != SplitTag::Train {
            return Err(Error::invalid(format!("{op} requires a train split")));
        }
        Ok(())
    }
}

/// Rounds `rate * n` half-up; the number of samples a noise rate touches.
pub fn noise_count(rate: f64, n: usize) -> usize {
    (rate * n as f64 + 0.5).floor() as usize
}

/// Duplicates minority-class samples (by training label) until every class
/// has as many samples as the largest one. Duplicates receive fresh ids.
pub fn oversample_balance(d: &Dataset, seed: u64) -> Result<Dataset> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in d.samples.iter().enumerate() {
        by_class.entry(s.train_label as usize).or_default().push(i);
    }
    if let Some(empty) = (0..d.num_classes).find(|c| !by_class.contains_key(c)) {
        return Err(Error::invalid(format!(
            "cannot oversample: class {empty} has no samples"
        )));
    }
    let target = by_class.values().map(Vec::len).max().unwrap_or(0);
    let mut next_id = d.samples.iter().map(|s| s.id).max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = d.clone();
    for members in by_class.values() {
        for _ in members.len()..target {
            let src = members[rng.random_range(0..members.len())];
            let mut dup = d.samples[src].clone();
            dup.id = next_id;
            next_id = next_id
                .checked_add(1)
                .ok_or_else(|| Error::invalid("sample id space exhausted"))?;
            out.samples.push(dup);
        }
    }
    Ok(out)
}

/// Splits a dataset into two disjoint parts after a seeded shuffle.
pub fn split_holdout(d: &Dataset, holdout: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if holdout > d.len() {
        return Err(Error::invalid("holdout larger than dataset"));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize], split| Dataset {
        samples: idx.iter().map(|&i| d.samples[i].clone()).collect(),
        split,
        ..d.clone_empty()
    };
    let (head, tail) = order.split_at(holdout);
    Ok((pick(tail, SplitTag::Train), pick(head, SplitTag::Test)))
}

impl Dataset {
    fn clone_empty(&self) -> Dataset {
        Dataset {
            samples: Vec::new(),
            num_classes: self.num_classes,
            height: self.height,
            width: self.width,
            split: self.split,
        }
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Dataset with the given per-class counts and tiny random images.
    pub fn with_counts(counts: &[usize], side: usize) -> Dataset {
        let mut samples = Vec::new();
        let mut id = 0;
        for (c, &n) in counts.iter().enumerate() {
            for j in 0..n {
                samples.push(Sample {
                    id,
                    true_label: c as u8,
                    train_label: c as u8,
                    pixels: (0..side * side).map(|p| ((p * 31 + j * 7 + c) % 256) as u8).collect(),
                });
                id += 1;
            }
        }
        Dataset::new(samples, counts.len(), side, side, SplitTag::Train).unwrap()
    }
}
