//! Central finite differences, the reference for analytic gradients.
//!
//! Nothing here touches the backward pass; the oracle only evaluates the
//! forward function.

use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-3;

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_differences<E>(mut f: impl FnMut(&[f64]) -> Result<f64, E>, x: &[f64], h: f64) -> Result<Vec<f64>, E> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Largest elementwise relative error between an analytic and a numeric
/// gradient.
///
/// The denominator is `max(|a|, |n|)` floored at 1% of the numeric
/// gradient's largest magnitude, so components that are negligible relative
/// to the gradient as a whole are judged on that common scale rather than
/// on their own vanishing size.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0f64, |m, v| m.max(v.abs()));
    let floor = (1e-2 * scale).max(1e-10);
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor)).fold(0.0, f64::max)
}

/// Convenience wrapper returning the error for `f` at `x` given its analytic
/// gradient.
pub fn check<E>(f: impl FnMut(&[f64]) -> Result<f64, E>, x: &[f64], analytic: &[f64]) -> Result<f64, E> {
    let numeric = central_differences(f, x, DEFAULT_STEP)?;
    Ok(max_relative_error(analytic, &numeric))
}
