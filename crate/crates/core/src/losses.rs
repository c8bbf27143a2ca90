//! Supervised cross-entropy on confident samples, the top-k class mask and
//! the masked weak/strong consistency term on non-confident samples.
//!
//! Probability matrices are row-major `batch x classes`. Each loss has a
//! companion that accumulates its gradient with respect to the logits that
//! produced the differentiated probabilities.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::real::Real;

/// Lower bound applied to probabilities before taking a logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// A loss value plus the number of log arguments that hit [`LOG_CLAMP`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerm {
    pub value: f64,
    pub clamped: usize,
}

fn clamped_neg_log(p: f64, clamped: &mut usize) -> f64 {
    if p < LOG_CLAMP {
        *clamped += 1;
        -LOG_CLAMP.ln()
    } else {
        -p.ln()
    }
}

/// Mean of `-log p_{y_i}` over `rows`; zero for an empty set.
pub fn supervised_ce<R: Real>(probs: &[R], classes: usize, labels: &[u8], rows: &[usize]) -> LossTerm {
    let mut term = LossTerm::default();
    if rows.is_empty() {
        return term;
    }
    let mut sum = 0.0;
    for &i in rows {
        let p = probs[i * classes + labels[i] as usize].as_f64();
        sum += clamped_neg_log(p, &mut term.clamped);
    }
    term.value = sum / rows.len() as f64;
    term
}

/// Adds `d supervised_ce / d logits` into `grad` (same layout as `probs`).
pub fn supervised_ce_grad<R: Real>(
    probs: &[R],
    classes: usize,
    labels: &[u8],
    rows: &[usize],
    grad: &mut [R],
) {
    if rows.is_empty() {
        return;
    }
    let scale = R::one() / R::from_usize(rows.len()).unwrap();
    for &i in rows {
        let y = labels[i] as usize;
        let row = &probs[i * classes..(i + 1) * classes];
        if row[y].as_f64() < LOG_CLAMP {
            // The clamped logarithm is flat here.
            continue;
        }
        let g = &mut grad[i * classes..(i + 1) * classes];
        for (c, (gc, &pc)) in g.iter_mut().zip(row).enumerate() {
            let onehot = if c == y { R::one() } else { R::zero() };
            *gc += scale * (pc - onehot);
        }
    }
}

/// Row mask with exactly `k` ones per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeMask {
    pub classes: usize,
    pub k: usize,
    bits: Vec<bool>,
}

impl NegativeMask {
    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> usize {
        self.bits.len() / self.classes
    }

    /// Mask rows as 0/1 integers, convenient for display and tests.
    pub fn row_u8(&self, i: usize) -> Vec<u8> {
        self.row(i).iter().map(|&b| b as u8).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskOrder {
    /// Keep the `k` most probable classes.
    Largest,
    /// Keep the `k` least probable classes.
    Smallest,
}

fn select_mask<R: Real>(probs: &[R], classes: usize, k: usize, order: MaskOrder) -> Result<NegativeMask> {
    if k < 1 || k > classes {
        return Err(Error::invalid(format!(
            "mask size k = {k} must satisfy 1 <= k <= {classes}"
        )));
    }
    let mut bits = vec![false; probs.len()];
    let mut idx: Vec<usize> = Vec::with_capacity(classes);
    for (row, out) in probs.chunks_exact(classes).zip(bits.chunks_exact_mut(classes)) {
        idx.clear();
        idx.extend(0..classes);
        // Ties resolve to the lower class index (stable sort on index order).
        idx.sort_by(|&a, &b| {
            let ord = row[a].partial_cmp(&row[b]).unwrap_or(Ordering::Equal);
            match order {
                MaskOrder::Largest => ord.reverse(),
                MaskOrder::Smallest => ord,
            }
        });
        for &c in &idx[..k] {
            out[c] = true;
        }
    }
    Ok(NegativeMask { classes, k, bits })
}

/// Keeps each row's `k` largest probabilities.
pub fn topk_mask<R: Real>(probs: &[R], classes: usize, k: usize) -> Result<NegativeMask> {
    select_mask(probs, classes, k, MaskOrder::Largest)
}

/// Keeps each row's `k` smallest probabilities (single-head ablation).
pub fn bottomk_mask<R: Real>(probs: &[R], classes: usize, k: usize) -> Result<NegativeMask> {
    select_mask(probs, classes, k, MaskOrder::Smallest)
}

/// `-(1/|rows|) sum_i sum_c mask[i,c] * target[i,c] * log(pred[i,c])`.
///
/// `target` is treated as a constant. The mask is applied without
/// renormalizing the target.
pub fn masked_consistency<R: Real>(
    target: &[R],
    pred: &[R],
    mask: &NegativeMask,
    rows: &[usize],
) -> LossTerm {
    let classes = mask.classes;
    let mut term = LossTerm::default();
    if rows.is_empty() {
        return term;
    }
    let mut sum = 0.0;
    for &i in rows {
        let m = mask.row(i);
        for c in 0..classes {
            if m[c] {
                let t = target[i * classes + c].as_f64();
                let q = pred[i * classes + c].as_f64();
                sum += t * clamped_neg_log(q, &mut term.clamped);
            }
        }
    }
    term.value = sum / rows.len() as f64;
    term
}

/// Adds `d masked_consistency / d logits(pred)` into `grad`.
///
/// With `w_c = mask_c * target_c` over unclamped classes, the per-row
/// gradient is `(q_j * sum_c w_c - w_j) / |rows|`.
pub fn masked_consistency_grad<R: Real>(
    target: &[R],
    pred: &[R],
    mask: &NegativeMask,
    rows: &[usize],
    grad: &mut [R],
) {
    let classes = mask.classes;
    if rows.is_empty() {
        return;
    }
    let scale = R::one() / R::from_usize(rows.len()).unwrap();
    let mut w = vec![R::zero(); classes];
    for &i in rows {
        let m = mask.row(i);
        let t = &target[i * classes..(i + 1) * classes];
        let q = &pred[i * classes..(i + 1) * classes];
        let mut total = R::zero();
        for c in 0..classes {
            w[c] = if m[c] && q[c].as_f64() >= LOG_CLAMP {
                t[c]
            } else {
                R::zero()
            };
            total += w[c];
        }
        let g = &mut grad[i * classes..(i + 1) * classes];
        for c in 0..classes {
            g[c] += scale * (q[c] * total - w[c]);
        }
    }
}

/// Both loss terms of one step, with the sample counts behind them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub supervised: f64,
    pub consistency: f64,
    pub overall: f64,
    pub num_confident: usize,
    pub num_non_confident: usize,
    /// Log arguments clamped at [`LOG_CLAMP`] across both terms.
    pub clamped: usize,
}

pub fn combine(
    supervised: LossTerm,
    consistency: LossTerm,
    num_confident: usize,
    num_non_confident: usize,
) -> Result<LossReport> {
    for (name, v) in [("L_s", supervised.value), ("L_c", consistency.value)] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { term: name, value: v });
        }
    }
    Ok(LossReport {
        supervised: supervised.value,
        consistency: consistency.value,
        overall: supervised.value + consistency.value,
        num_confident,
        num_non_confident,
        clamped: supervised.clamped + consistency.clamped,
    })
}
