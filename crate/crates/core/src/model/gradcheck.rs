//! Central finite-difference verification of analytic gradients.

use super::objective::{loss_and_gradient, objective_loss, ConsistencyHead, Objective, TrainBatch};
use super::{Block, ModelParams};
use crate::error::Result;

/// Primary finite-difference step.
pub const FD_STEP: f64 = 1e-3;
/// Smallest step tried when a probe straddles a ReLU or max-pool kink.
const MIN_STEP: f64 = 1e-7;
/// Gradient magnitudes below this are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `(f(x + h) - f(x - h)) / 2h` for each coordinate of `x`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter block and offset where the maximum occurred.
    pub worst: Option<(Block, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    pub checked: usize,
    /// Coordinates whose `FD_STEP` probe crossed a kink and were re-probed
    /// with a smaller step.
    pub refined: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative error `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares [`loss_and_gradient`] against central differences of the loss,
/// holding the selection rows, the mask and the consistency target fixed at
/// their base-point values.
///
/// Each coordinate uses the Richardson combination `(4 D(h/2) - D(h)) / 3` of
/// two central differences, starting at `h = FD_STEP`. Plain central
/// differences at that step carry an `O(h^2)` truncation error that exceeds
/// `1e-4` relative on small gradient entries; the combination is `O(h^4)`.
///
/// A probe whose points change any ReLU sign or max-pool winner is repeated
/// with `h / 10` until every point shares the base regime (down to `1e-7`),
/// so the comparison is against the smooth piece the analytic gradient
/// describes.
pub fn grad_check(
    params: &ModelParams<f64>,
    batch: &TrainBatch<f64>,
    objective: &Objective<'_>,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let analytic = loss_and_gradient(params, batch, objective)?;
    let base = &analytic.forward;
    let target: Option<Vec<f64>> = objective.consistency.map(|t| match t.head {
        ConsistencyHead::Negative => base.predictions.p_w_n.clone(),
        ConsistencyHead::Positive => base.predictions.p_w_p.clone(),
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        checked: 0,
        refined: 0,
        tolerance,
        passed: true,
    };
    let mut probe = params.clone();
    for idx in 0..params.num_params() {
        let x = params.get_flat(idx);
        let mut h = FD_STEP;
        let numeric = loop {
            let mut smooth = true;
            let mut diff = |step: f64| -> Result<f64> {
                probe.set_flat(idx, x + step);
                let (up, fu) = objective_loss(&probe, batch, objective, target.as_deref())?;
                probe.set_flat(idx, x - step);
                let (down, fd) = objective_loss(&probe, batch, objective, target.as_deref())?;
                probe.set_flat(idx, x);
                smooth &= base.same_regime(&fu) && base.same_regime(&fd);
                Ok((up.overall - down.overall) / (2.0 * step))
            };
            let coarse = diff(h)?;
            let fine = diff(h / 2.0)?;
            if smooth || h / 10.0 < MIN_STEP {
                break (4.0 * fine - coarse) / 3.0;
            }
            if h == FD_STEP {
                report.refined += 1;
            }
            h /= 10.0;
        };
        let (block, offset) = params.locate_flat(idx);
        let a = analytic.grads.block(block)[offset];
        let err = relative_error(a, numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err;
            report.worst = Some((block, offset));
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    report.passed = report.max_rel_error < tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_difference_on_quadratic() {
        let f = |v: &[f64]| v[0] * v[0] + 2.0 * v[0] * v[1] + v[1] * v[1] * v[1];
        let g = central_difference(f, &[1.0, 2.0], 1e-4);
        assert!((g[0] - 6.0).abs() < 1e-6);
        assert!((g[1] - 14.0).abs() < 1e-6);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-12);
    }
}
