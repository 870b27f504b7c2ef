//! Central finite-difference verification of analytic gradients.
//!
//! The checker re-evaluates the loss at `theta_i +/- step` for a set of
//! probed parameter indices and compares the quotient against the analytic
//! gradient, using a relative error with an absolute floor (tiny gradients
//! drown in difference noise otherwise).

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_err: f64,
    /// Index of the worst probe.
    pub worst_index: usize,
}

/// Probes `indices` of `params`, comparing `analytic` against central
/// differences of `loss`. `params` is restored exactly after each probe.
pub fn check_gradients(
    loss: &mut impl FnMut(&[f64]) -> f64,
    params: &mut [f64],
    analytic: &[f64],
    indices: &[usize],
    step: f64,
) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len());
    let mut max_rel_err = 0.0f64;
    let mut worst_index = 0;
    for &i in indices {
        let orig = params[i];
        params[i] = orig + step;
        let up = loss(params);
        params[i] = orig - step;
        let down = loss(params);
        params[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-4);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_index = i;
        }
    }
    GradCheckReport {
        probes: indices.len(),
        max_rel_err,
        worst_index,
    }
}
