use serde::Serialize;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: usize,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Compares analytic gradients against central differences.
///
/// `loss_fn` returns the loss and its analytic gradient for every tensor in
/// `params`. Per coordinate the error is
/// `|g_a - g_n| / max(|g_a|, |g_n|, 1e-8)`; the maximum is reported.
pub fn grad_check<L>(mut loss_fn: L, params: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    L: FnMut(&[Tensor<f64>]) -> Result<(f64, Vec<Tensor<f64>>)>,
{
    let (loss, analytic) = loss_fn(params)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "loss_fn returned {} gradients for {} tensors",
            analytic.len(),
            params.len()
        )));
    }
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: 0,
        worst_index: 0,
        coordinates: 0,
    };
    for (ti, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[ti].shape() {
            return Err(Error::ShapeMismatch(format!("gradient {ti} shape")));
        }
        for j in 0..params[ti].len() {
            let orig = params[ti].data()[j];
            work[ti].data_mut()[j] = orig + eps;
            let (plus, _) = loss_fn(&work)?;
            work[ti].data_mut()[j] = orig - eps;
            let (minus, _) = loss_fn(&work)?;
            work[ti].data_mut()[j] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite("grad_check perturbed loss".into()));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let ga = grad.data()[j];
            let rel = (ga - numeric).abs() / ga.abs().max(numeric.abs()).max(1e-8);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_tensor = ti;
                report.worst_index = j;
            }
        }
    }
    Ok(report)
}
