//! Numeric gradient checking via central finite differences.
//!
//! Every parameter element is nudged by ±eps and the loss re-evaluated, so
//! any forward that is a pure function of the parameter values can be
//! validated against its recorded backward pass, regardless of how many
//! ops it composes.

use super::params::Params;
use super::tensor::Tensor;

/// Central-difference gradients of `loss` for every parameter, in id
/// order. `loss` must be a pure deterministic function of the parameter
/// values (re-seed any randomness inside it).
pub fn numeric_gradients(
    params: &mut Params,
    eps: f64,
    mut loss: impl FnMut(&Params) -> f64,
) -> Vec<Tensor> {
    let ids: Vec<_> = params.ids().collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let (rows, cols) = params.value(id).shape();
        let mut g = Tensor::zeros(rows, cols);
        for i in 0..g.data.len() {
            let orig = params.value(id).data[i];
            params.value_mut(id).data[i] = orig + eps;
            let up = loss(params);
            params.value_mut(id).data[i] = orig - eps;
            let down = loss(params);
            params.value_mut(id).data[i] = orig;
            g.data[i] = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

/// The gradients currently accumulated in `params`, in id order.
pub fn collected_gradients(params: &Params) -> Vec<Tensor> {
    params.ids().map(|id| params.grad(id).clone()).collect()
}

/// Largest relative disagreement across all elements, with the denominator
/// floored so near-zero gradients compare absolutely.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient list length mismatch");
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.shape(), n.shape(), "gradient shape mismatch");
        for (&x, &y) in a.data.iter().zip(&n.data) {
            let denom = x.abs().max(y.abs()).max(1e-6);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}
