//! Shared test oracles: finite differences and comparison helpers.
//!
//! The finite-difference oracle is intentionally independent of the tape:
//! it only ever re-evaluates a black-box loss closure.

#![allow(dead_code)]

pub const FD_STEP: f64 = 1e-5;

/// Central finite differences of a scalar function at `x`.
pub fn finite_diff_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest elementwise relative error with a small absolute floor so that
/// near-zero gradients do not explode the ratio.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-4))
        .fold(0.0, f64::max)
}
