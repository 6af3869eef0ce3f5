use super::Tensor;
use crate::error::{Error, Result};

/// Relative discrepancy used by every gradient check in this crate.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Central-difference gradient check; returns the worst relative error per
/// parameter tensor.
pub fn finite_diff_check_per_tensor<F>(
    mut loss_fn: F,
    params: &[Tensor],
    analytic: &[Tensor],
    eps: f64,
) -> Result<Vec<f64>>
where
    F: FnMut(&[Tensor]) -> f64,
{
    if params.len() != analytic.len() {
        return Err(Error::shape(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            analytic.len()
        )));
    }
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::domain(format!("eps {eps} outside [1e-6, 1e-3]")));
    }
    let mut work = params.to_vec();
    let mut worst = Vec::with_capacity(params.len());
    for (t, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[t].shape() {
            return Err(Error::shape(format!(
                "gradient {t} has shape {:?}, parameter {:?}",
                grad.shape(),
                params[t].shape()
            )));
        }
        let mut max_err = 0.0f64;
        for i in 0..params[t].len() {
            let orig = params[t].data()[i];
            work[t].data_mut()[i] = orig + eps;
            let plus = loss_fn(&work);
            work[t].data_mut()[i] = orig - eps;
            let minus = loss_fn(&work);
            work[t].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss not finite while perturbing tensor {t} entry {i}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            max_err = max_err.max(relative_error(grad.data()[i], numeric));
        }
        worst.push(max_err);
    }
    Ok(worst)
}

/// Worst relative error over every coordinate of every tensor.
pub fn finite_diff_check<F>(loss_fn: F, params: &[Tensor], analytic: &[Tensor], eps: f64) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> f64,
{
    Ok(finite_diff_check_per_tensor(loss_fn, params, analytic, eps)?
        .into_iter()
        .fold(0.0, f64::max))
}
