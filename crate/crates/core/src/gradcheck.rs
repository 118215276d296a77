//! Central finite-difference utilities.
//!
//! These are the numeric oracles the layer and loss tests compare against;
//! they know nothing about any analytic backward pass.

/// Central-difference gradient of `f` at `x`, one perturbed evaluation pair
/// per coordinate.
pub fn numerical_grad<F>(x: &[f64], step: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = work[i];
        work[i] = orig + step;
        let plus = f(&work);
        work[i] = orig - step;
        let minus = f(&work);
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * step);
    }
    grad
}

/// Scaled infinity-norm error between an analytic and a numeric gradient:
/// `max|a - n| / max(max|a|, max|n|)`. Zero when both gradients vanish.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut max_diff = 0.0f64;
    let mut scale = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric.iter()) {
        max_diff = max_diff.max((a - n).abs());
        scale = scale.max(a.abs()).max(n.abs());
    }
    if scale == 0.0 {
        return if max_diff == 0.0 { 0.0 } else { f64::INFINITY };
    }
    max_diff / scale
}

/// Convenience: run `numerical_grad` and report the scaled error against the
/// analytic gradient in one call.
pub fn check<F>(analytic: &[f64], x: &[f64], step: f64, f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = numerical_grad(x, step, f);
    max_rel_error(analytic, &numeric)
}
