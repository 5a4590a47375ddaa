/// Outcome of a finite-difference gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter index where the worst error occurred.
    pub worst_index: usize,
    pub pass: bool,
}

const STEP: f64 = 1e-4;
// Components whose analytic and numeric magnitudes are both below this are
// compared in absolute terms.
const SCALE_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient returned by `loss_fn` at `params` with
/// central differences of its loss.
///
/// `loss_fn` must be deterministic: it returns `(loss, analytic_gradient)`.
pub fn finite_diff_check<L>(mut loss_fn: L, params: &[f64], tolerance: f64) -> GradCheckReport
where
    L: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss_fn(params);
    assert_eq!(analytic.len(), params.len(), "gradient length must match params");
    let mut probe = params.to_vec();
    let mut max_rel_err = 0.0f64;
    let mut worst_index = 0;
    for i in 0..params.len() {
        probe[i] = params[i] + STEP;
        let (plus, _) = loss_fn(&probe);
        probe[i] = params[i] - STEP;
        let (minus, _) = loss_fn(&probe);
        probe[i] = params[i];
        let numeric = (plus - minus) / (2.0 * STEP);
        let scale = analytic[i].abs().max(numeric.abs()).max(SCALE_FLOOR);
        let rel = (analytic[i] - numeric).abs() / scale;
        if rel > max_rel_err || rel.is_nan() {
            max_rel_err = rel;
            worst_index = i;
        }
    }
    GradCheckReport {
        max_rel_err,
        worst_index,
        pass: max_rel_err < tolerance,
    }
}
