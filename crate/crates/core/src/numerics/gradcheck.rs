use super::Tensor;

/// Outcome of comparing analytic gradients with central finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` over all checked entries.
    pub max_rel_error: f64,
    /// Per-tensor maximum relative error, in parameter order.
    pub per_tensor: Vec<f64>,
    /// `(tensor, entry)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
    /// Entries whose one-sided slopes disagree, i.e. the perturbation crossed
    /// a ReLU or max-pool kink. These are not differentiable there.
    pub skipped: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks `loss_fn`'s analytic gradient against central differences
/// `(f(θ+eps) - f(θ-eps)) / 2eps`, one parameter entry at a time.
///
/// `loss_fn` must be deterministic: any dropout masks have to be reseeded on
/// every call.
pub fn grad_check<F>(params: &mut [Tensor<f64>], eps: f64, mut loss_fn: F) -> GradCheckReport
where
    F: FnMut(&[Tensor<f64>]) -> (f64, Vec<Tensor<f64>>),
{
    let (f0, analytic) = loss_fn(params);
    assert_eq!(analytic.len(), params.len(), "one gradient per parameter");
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_tensor: vec![0.0; params.len()],
        worst: (0, 0),
        checked: 0,
        skipped: 0,
    };
    for ti in 0..params.len() {
        for ei in 0..params[ti].len() {
            let orig = params[ti].data()[ei];
            params[ti].data_mut()[ei] = orig + eps;
            let (fp, _) = loss_fn(params);
            params[ti].data_mut()[ei] = orig - eps;
            let (fm, _) = loss_fn(params);
            params[ti].data_mut()[ei] = orig;

            let numeric = (fp - fm) / (2.0 * eps);
            let fwd = (fp - f0) / eps;
            let bwd = (f0 - fm) / eps;
            let scale = fwd.abs().max(bwd.abs()).max(1e-6);
            if (fwd - bwd).abs() > 1e-2 * scale && (fwd - bwd).abs() > 1e-6 {
                report.skipped += 1;
                continue;
            }
            let err = relative_error(analytic[ti].data()[ei], numeric);
            report.checked += 1;
            if err > report.per_tensor[ti] {
                report.per_tensor[ti] = err;
            }
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (ti, ei);
            }
        }
    }
    report
}
