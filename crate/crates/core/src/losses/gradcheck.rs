use crate::error::{Error, Result};

/// Compares an analytic gradient against central finite differences.
///
/// `eval` returns `(loss, gradient)` at a point. The analytic gradient is
/// taken at `inputs`; every coordinate is then perturbed by `±eps`. The
/// result is the maximum over coordinates of
/// `|analytic - numeric| / max(1e-8, |numeric|)`.
pub fn finite_difference_check<F>(eval: F, inputs: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be in (0, 1e-2], got {eps}"
        )));
    }
    let (value, analytic) = eval(inputs);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss(" at the unperturbed point".into()));
    }
    if analytic.len() != inputs.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            actual: analytic.len(),
        });
    }
    let mut point = inputs.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..inputs.len() {
        point[i] = inputs[i] + eps;
        let up = eval(&point).0;
        point[i] = inputs[i] - eps;
        let down = eval(&point).0;
        point[i] = inputs[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteLoss(format!(" when perturbing coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
