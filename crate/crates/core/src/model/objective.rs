//! The training objective `L = L_s + L_c` and its exact gradient.

use super::network::{backward, forward, Forward, ImageBatch, LogitGrads};
use super::ModelParams;
use crate::error::{Error, Result};
use crate::losses::{self, LossReport, NegativeMask};
use crate::real::Real;

/// Images (weak view and optionally strong view) with their training labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch<R> {
    pub weak: Vec<R>,
    pub strong: Option<Vec<R>>,
    pub labels: Vec<u8>,
    pub height: usize,
    pub width: usize,
}

impl<R: Real> TrainBatch<R> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn weak_view(&self) -> Result<ImageBatch<'_, R>> {
        ImageBatch::new(&self.weak, self.len(), self.height, self.width)
    }

    pub fn strong_view(&self) -> Result<Option<ImageBatch<'_, R>>> {
        self.strong
            .as_ref()
            .map(|s| ImageBatch::new(s, self.len(), self.height, self.width))
            .transpose()
    }
}

/// Which head the consistency term is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsistencyHead {
    /// Negative-class head (two-head training).
    Negative,
    /// Positive-class head (single-head ablation).
    Positive,
}

#[derive(Debug, Clone, Copy)]
pub struct ConsistencyTerm<'a> {
    pub head: ConsistencyHead,
    pub rows: &'a [usize],
    pub mask: &'a NegativeMask,
}

/// Rows entering each loss term. `supervised_rows` use the positive head on
/// the weak view; the consistency term pulls the strong view toward the
/// (constant) weak view of the chosen head.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub supervised_rows: &'a [usize],
    pub consistency: Option<ConsistencyTerm<'a>>,
}

impl<'a> Objective<'a> {
    pub fn supervised(rows: &'a [usize]) -> Self {
        Objective {
            supervised_rows: rows,
            consistency: None,
        }
    }

    fn needs_strong(&self) -> bool {
        self.consistency.is_some_and(|c| !c.rows.is_empty())
    }
}

/// Gradient of the objective, congruent with the parameters, plus the loss.
#[derive(Debug, Clone)]
pub struct GradientReport<R> {
    pub grads: ModelParams<R>,
    pub loss: LossReport,
    pub forward: Forward<R>,
}

fn run_forward<R: Real>(
    params: &ModelParams<R>,
    batch: &TrainBatch<R>,
    objective: &Objective<'_>,
) -> Result<Forward<R>> {
    let strong = if objective.needs_strong() {
        Some(batch.strong_view()?.ok_or_else(|| {
            Error::Shape("consistency term needs a strong view in the batch".into())
        })?)
    } else {
        None
    };
    forward(params, batch.weak_view()?, strong)
}

/// Weak-view and strong-view probabilities of the consistency head.
fn consistency_pair<R>(fwd: &Forward<R>, head: ConsistencyHead) -> (&[R], &[R]) {
    let p = &fwd.predictions;
    match head {
        ConsistencyHead::Negative => (&p.p_w_n, p.p_s_n.as_deref().expect("strong view")),
        ConsistencyHead::Positive => (&p.p_w_p, p.p_s_p.as_deref().expect("strong view")),
    }
}

/// Evaluates the objective. `target` overrides the consistency target
/// (normally the weak-view probabilities of this very pass); finite
/// differences pass the base-point target so it stays constant.
pub fn objective_loss<R: Real>(
    params: &ModelParams<R>,
    batch: &TrainBatch<R>,
    objective: &Objective<'_>,
    target: Option<&[R]>,
) -> Result<(LossReport, Forward<R>)> {
    let fwd = run_forward(params, batch, objective)?;
    let loss = losses_of(&fwd, batch, objective, target)?;
    Ok((loss, fwd))
}

fn losses_of<R: Real>(
    fwd: &Forward<R>,
    batch: &TrainBatch<R>,
    objective: &Objective<'_>,
    target: Option<&[R]>,
) -> Result<LossReport> {
    let p = &fwd.predictions;
    let ls = losses::supervised_ce(&p.p_w_p, p.classes, &batch.labels, objective.supervised_rows);
    let (lc, nc) = match objective.consistency {
        Some(term) if !term.rows.is_empty() => {
            let (tw, ps) = consistency_pair(fwd, term.head);
            let t = target.unwrap_or(tw);
            (losses::masked_consistency(t, ps, term.mask, term.rows), term.rows.len())
        }
        _ => (losses::LossTerm::default(), 0),
    };
    losses::combine(ls, lc, objective.supervised_rows.len(), nc)
}

/// Loss and exact gradient of `L_s + L_c` with respect to every parameter.
/// The consistency target is detached: gradient flows only through the
/// strong-view log-probabilities.
pub fn loss_and_gradient<R: Real>(
    params: &ModelParams<R>,
    batch: &TrainBatch<R>,
    objective: &Objective<'_>,
) -> Result<GradientReport<R>> {
    let fwd = run_forward(params, batch, objective)?;
    gradient_at(params, batch, objective, fwd)
}

/// As [`loss_and_gradient`], reusing a forward pass the caller already ran
/// (for example to select rows from its predictions). The pass must include
/// the strong view whenever the consistency term has rows.
pub fn gradient_at<R: Real>(
    params: &ModelParams<R>,
    batch: &TrainBatch<R>,
    objective: &Objective<'_>,
    fwd: Forward<R>,
) -> Result<GradientReport<R>> {
    if objective.needs_strong() && fwd.predictions.p_s_p.is_none() {
        return Err(Error::Shape(
            "consistency term needs a forward pass over the strong view".into(),
        ));
    }
    let loss = losses_of(&fwd, batch, objective, None)?;
    let p = &fwd.predictions;
    let c = p.classes;
    let mut g = LogitGrads::default();
    if !objective.supervised_rows.is_empty() {
        let mut d = vec![R::zero(); p.batch * c];
        losses::supervised_ce_grad(&p.p_w_p, c, &batch.labels, objective.supervised_rows, &mut d);
        g.pcc_weak = Some(d);
    }
    if let Some(term) = objective.consistency.filter(|t| !t.rows.is_empty()) {
        let (tw, ps) = consistency_pair(&fwd, term.head);
        let mut d = vec![R::zero(); p.batch * c];
        losses::masked_consistency_grad(tw, ps, term.mask, term.rows, &mut d);
        match term.head {
            ConsistencyHead::Negative => g.ncc_strong = Some(d),
            ConsistencyHead::Positive => g.pcc_strong = Some(d),
        }
    }
    let grads = backward(params, &fwd, &g)?;
    Ok(GradientReport {
        grads,
        loss,
        forward: fwd,
    })
}
