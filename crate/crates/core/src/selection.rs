//! Per-class dynamic thresholds and the confident / non-confident split of a
//! mini-batch.

use crate::error::{Error, Result};
use crate::real::Real;

/// `T_c` for every class present in the batch; `None` for absent classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdVector {
    entries: Vec<Option<f64>>,
}

impl ThresholdVector {
    pub fn get(&self, class: usize) -> Option<f64> {
        self.entries.get(class).copied().flatten()
    }

    pub fn num_classes(&self) -> usize {
        self.entries.len()
    }

    /// Classes that have a threshold, ascending.
    pub fn present(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(c, t)| t.map(|t| (c, t)))
    }
}

/// Mean probability of the labelled class within each labelled-class group.
///
/// `probs` is a row-major `labels.len() x classes` matrix. The mean is clamped
/// into the group's `[min, max]` so floating-point rounding can never push it
/// above every member (which would leave a class with no confident sample).
pub fn compute_thresholds<R: Real>(probs: &[R], classes: usize, labels: &[u8]) -> ThresholdVector {
    debug_assert_eq!(probs.len(), labels.len() * classes);
    let mut sum = vec![0.0f64; classes];
    let mut count = vec![0usize; classes];
    let mut lo = vec![f64::INFINITY; classes];
    let mut hi = vec![f64::NEG_INFINITY; classes];
    for (row, &y) in probs.chunks_exact(classes).zip(labels) {
        let y = y as usize;
        let p = row[y].as_f64();
        sum[y] += p;
        count[y] += 1;
        lo[y] = lo[y].min(p);
        hi[y] = hi[y].max(p);
    }
    let entries = (0..classes)
        .map(|c| (count[c] > 0).then(|| (sum[c] / count[c] as f64).clamp(lo[c], hi[c])))
        .collect();
    ThresholdVector { entries }
}

/// Disjoint cover of a batch's row indices, both lists ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchPartition {
    pub confident: Vec<usize>,
    pub non_confident: Vec<usize>,
}

impl BatchPartition {
    pub fn all_confident(n: usize) -> Self {
        BatchPartition {
            confident: (0..n).collect(),
            non_confident: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.confident.len() + self.non_confident.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sample `i` is confident iff `p_{y_i}(x_i) >= T_{y_i}`.
pub fn partition_batch<R: Real>(
    probs: &[R],
    classes: usize,
    labels: &[u8],
    thresholds: &ThresholdVector,
) -> Result<BatchPartition> {
    let mut part = BatchPartition::default();
    for (i, (row, &y)) in probs.chunks_exact(classes).zip(labels).enumerate() {
        let t = thresholds.get(y as usize).ok_or_else(|| {
            Error::Internal(format!("no threshold for class {y} present in the batch"))
        })?;
        if row[y as usize].as_f64() >= t {
            part.confident.push(i);
        } else {
            part.non_confident.push(i);
        }
    }
    Ok(part)
}

/// Thresholds and partition in one call.
pub fn select<R: Real>(probs: &[R], classes: usize, labels: &[u8]) -> (ThresholdVector, BatchPartition) {
    let t = compute_thresholds(probs, classes, labels);
    let p = partition_batch(probs, classes, labels, &t)
        .expect("thresholds computed from the same batch cover every present class");
    (t, p)
}
