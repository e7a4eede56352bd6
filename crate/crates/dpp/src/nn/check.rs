//! Central-finite-difference gradient verification.

use super::{Params, Scalar};

/// Numeric gradients for a deterministic scalar loss, evaluated at up to
/// `max_per_tensor` elements per parameter tensor (elements are spread evenly
/// across each tensor). Returns `(param_index, element_index, grad)` triples.
pub fn central_difference_grads<F>(
    params: &mut Params<f64>,
    mut loss: F,
    rel_step: f64,
    max_per_tensor: usize,
) -> Vec<(usize, usize, f64)>
where
    F: FnMut(&Params<f64>) -> f64,
{
    let mut out = Vec::new();
    for pi in 0..params.len() {
        let n = params.values()[pi].len();
        let count = n.min(max_per_tensor);
        if count == 0 {
            continue;
        }
        let stride = n / count;
        for j in 0..count {
            let ei = j * stride;
            let orig = params.values()[pi].as_slice().unwrap()[ei];
            let h = rel_step * orig.abs().max(1.0);

            params.values_mut()[pi].as_slice_mut().unwrap()[ei] = orig + h;
            let up = loss(params);
            params.values_mut()[pi].as_slice_mut().unwrap()[ei] = orig - h;
            let down = loss(params);
            params.values_mut()[pi].as_slice_mut().unwrap()[ei] = orig;

            out.push((pi, ei, (up - down) / (2.0 * h)));
        }
    }
    out
}

/// Max over checked elements of
/// `max(0, |analytic - numeric| - atol) / max(|analytic|, |numeric|)`.
///
/// The absolute tolerance absorbs finite-difference roundoff on gradients
/// that are genuinely (near) zero, where a pure ratio is meaningless.
pub fn max_relative_error<T: Scalar>(
    analytic: &super::GradStore<T>,
    numeric: &[(usize, usize, f64)],
    atol: f64,
) -> f64 {
    let mut worst = 0.0f64;
    for &(pi, ei, num) in numeric {
        let ana = analytic.values()[pi].as_slice().unwrap()[ei]
            .to_f64()
            .expect("grad converts to f64");
        let excess = ((ana - num).abs() - atol).max(0.0);
        if excess > 0.0 {
            worst = worst.max(excess / ana.abs().max(num.abs()));
        }
    }
    worst
}
