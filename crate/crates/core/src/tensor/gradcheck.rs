use super::Tensor;

/// Central-difference gradient of a scalar function at `theta`.
///
/// Each coordinate is perturbed by `±eps` in turn; `f` sees the perturbed
/// tensor and must not depend on any hidden state that changes between calls.
pub fn fd_gradient<F>(mut f: F, theta: &Tensor, eps: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = theta.clone();
    let mut grad = Tensor::zeros(theta.shape());
    for i in 0..theta.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Largest elementwise relative error `|a−b| / max(|a|, |b|, floor)`.
///
/// The floor keeps near-zero entries from dominating: below it the measure
/// degrades gracefully to an absolute error scaled by `1/floor`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}
