//! Finite-difference verification of analytic gradients.

use crate::{no_grad, Tensor};

/// Deterministic pseudo-random values in `[-1, 1)` (64-bit LCG).
pub fn values(seed: u64, n: usize) -> Vec<f64> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

/// Largest discrepancy between the backward-pass gradient of `f` and central
/// differences, each scaled by `max(1, |analytic|, |numeric|)`.
pub fn max_gradient_error(inputs: &[Tensor<f64>], f: impl Fn(&[Tensor<f64>]) -> Tensor<f64>, step: f64) -> f64 {
    let grads = f(inputs).backward();
    let mut worst = 0.0f64;
    for (idx, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(input)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        for (j, &a) in analytic.iter().enumerate() {
            let eval = |delta: f64| {
                let mut data = input.to_vec();
                data[j] += delta;
                let mut probe = inputs.to_vec();
                probe[idx] = Tensor::from_vec(data, input.shape());
                no_grad(|| f(&probe).item())
            };
            let numeric = (eval(step) - eval(-step)) / (2.0 * step);
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    worst
}

/// Panics unless analytic and numeric gradients agree to `1e-6`.
pub fn assert_gradients(inputs: &[Tensor<f64>], f: impl Fn(&[Tensor<f64>]) -> Tensor<f64>) {
    let err = max_gradient_error(inputs, f, 1e-5);
    assert!(err < 1e-6, "gradient mismatch: relative error {err:e}");
}
