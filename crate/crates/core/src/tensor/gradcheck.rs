//! Central finite-difference gradient checking (64-bit only).

use super::Tensor;
use crate::error::{Error, Result};

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of a scalar function against
/// `(f(x + eps) - f(x - eps)) / 2 eps` at every coordinate of `x`.
///
/// `f` returns the scalar value and its analytic gradient with respect to
/// its argument; the gradient is only read at the unperturbed point.
/// Returns the largest elementwise relative error.
pub fn grad_check<F>(mut f: F, x: &Tensor<f64>, epsilon: f64) -> Result<f64>
where
    F: FnMut(&Tensor<f64>) -> Result<(f64, Vec<f64>)>,
{
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let (_, analytic) = f(x)?;
    if analytic.len() != x.len() {
        return Err(Error::Shape(format!(
            "analytic gradient has {} entries for input {:?}",
            analytic.len(),
            x.shape()
        )));
    }
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let (plus, _) = f(&probe)?;
        probe.data_mut()[i] = orig - epsilon;
        let (minus, _) = f(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}
