//! Central finite differences for gradient verification.
//!
//! The numeric gradient here is the independent oracle used by the loss and
//! model tests; it never calls any analytic backward path.

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_diff<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Largest element-wise relative error between two gradients, with a small
/// magnitude floor so near-zero entries compare absolutely.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
