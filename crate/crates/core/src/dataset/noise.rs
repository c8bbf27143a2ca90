//! Synthetic label corruption: symmetric flips and confusion-pair flips.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{noise_count, Dataset};
use crate::error::{Error, Result};

/// Class order used by the default confusion table (RAF-DB convention).
pub const RAFDB_CLASSES: [&str; 7] = [
    "Surprise", "Fear", "Disgust", "Happy", "Sad", "Anger", "Neutral",
];

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) || rate.is_nan() {
        return Err(Error::invalid(format!("noise rate {rate} outside [0, 1]")));
    }
    Ok(())
}

/// Relabels exactly `round(rate * n)` uniformly chosen samples to a class
/// drawn uniformly from the `C - 1` classes other than the true label.
pub fn inject_symmetric_noise(d: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    check_rate(rate)?;
    d.require_train("symmetric noise injection")?;
    let n = d.len();
    let flips = noise_count(rate, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = d.clone();
    let mut chosen = index::sample(&mut rng, n, flips).into_vec();
    chosen.sort_unstable();
    let others = d.num_classes - 1;
    for i in chosen {
        let s = &mut out.samples[i];
        let draw = rng.random_range(0..others) as u8;
        // Skip over the true label so the draw covers exactly the other classes.
        s.train_label = if draw >= s.true_label { draw + 1 } else { draw };
    }
    Ok(out)
}

/// For every `source -> target` pair, relabels exactly
/// `round(rate * |true class source|)` samples of `source` to `target`.
pub fn inject_asymmetric_noise(
    d: &Dataset,
    rate: f64,
    pairs: &ConfusionPairs,
    seed: u64,
) -> Result<Dataset> {
    check_rate(rate)?;
    d.require_train("asymmetric noise injection")?;
    pairs.check_classes(d.num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = d.clone();
    for (&src, &dst) in pairs.iter() {
        let members: Vec<usize> = d
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.true_label as usize == src)
            .map(|(i, _)| i)
            .collect();
        let flips = noise_count(rate, members.len());
        let mut picked = index::sample(&mut rng, members.len(), flips).into_vec();
        picked.sort_unstable();
        for p in picked {
            out.samples[members[p]].train_label = dst as u8;
        }
    }
    Ok(out)
}

/// Mapping from a ground-truth class to the class it gets confused with.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfusionPairs {
    pairs: BTreeMap<usize, usize>,
}

impl ConfusionPairs {
    pub fn new() -> Self {
        Self::default()
    }

    /// The seven most-confused RAF-DB pairs, indexed by [`RAFDB_CLASSES`].
    pub fn rafdb_default() -> Self {
        let name = |n: &str| RAFDB_CLASSES.iter().position(|c| *c == n).unwrap();
        let mut p = Self::new();
        for (a, b) in [
            ("Surprise", "Anger"),
            ("Fear", "Surprise"),
            ("Disgust", "Anger"),
            ("Happy", "Neutral"),
            ("Sad", "Neutral"),
            ("Anger", "Happy"),
            ("Neutral", "Sad"),
        ] {
            p.insert(name(a), name(b)).expect("default table is valid");
        }
        p
    }

    pub fn insert(&mut self, source: usize, target: usize) -> Result<()> {
        if source == target {
            return Err(Error::invalid(format!(
                "confusion pair {source}->{target} maps a class to itself"
            )));
        }
        if self.pairs.insert(source, target).is_some() {
            return Err(Error::invalid(format!(
                "class {source} appears as a source more than once"
            )));
        }
        Ok(())
    }

    pub fn get(&self, source: usize) -> Option<usize> {
        self.pairs.get(&source).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&usize, &usize)> {
        self.pairs.iter()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    fn check_classes(&self, num_classes: usize) -> Result<()> {
        for (&s, &t) in &self.pairs {
            if s >= num_classes || t >= num_classes {
                return Err(Error::invalid(format!(
                    "confusion pair {s}->{t} references a class outside 0..{num_classes}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ConfusionPairs {
    /// One `src,dst` line per pair; the same text [`FromStr`] accepts.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (s, t) in &self.pairs {
            writeln!(f, "{s},{t}")?;
        }
        Ok(())
    }
}

impl FromStr for ConfusionPairs {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut pairs = ConfusionPairs::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let malformed = || Error::Malformed {
                what: "pairs file",
                detail: format!("line {}: expected `src,dst`, got `{raw}`", lineno + 1),
            };
            let (a, b) = line.split_once(',').ok_or_else(malformed)?;
            let src: usize = a.trim().parse().map_err(|_| malformed())?;
            let dst: usize = b.trim().parse().map_err(|_| malformed())?;
            pairs.insert(src, dst)?;
        }
        Ok(pairs)
    }
}
