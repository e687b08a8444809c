//! Shared test oracles: central finite differences and brute-force
//! reference implementations, independent of the graph engine they check.
//!
//! Each integration test binary uses its own subset.
#![allow(dead_code)]

use cdac::model::ModelParams;

/// Central finite-difference gradient of `f` at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let hi = f(&probe);
        probe[i] = x[i] - eps;
        let lo = f(&probe);
        probe[i] = x[i];
        grad[i] = (hi - lo) / (2.0 * eps);
    }
    grad
}

/// Worst relative disagreement between two gradients. Elements where both
/// magnitudes are below `1e-7` count as agreeing zeros.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        let scale = a.abs().max(n.abs());
        if scale < 1e-7 {
            continue;
        }
        worst = worst.max((a - n).abs() / scale);
    }
    worst
}

/// Central finite differences of a scalar function of the full parameter
/// set, flattened in `arrays_mut` order.
pub fn param_central_diff(
    params: &ModelParams,
    mut f: impl FnMut(&ModelParams) -> f64,
    eps: f64,
) -> Vec<f64> {
    let mut probe = params.clone();
    let mut grad = Vec::new();
    let n_arrays = params.arrays().len();
    for ai in 0..n_arrays {
        let len = params.arrays()[ai].len();
        for i in 0..len {
            let orig = params.arrays()[ai][i];
            probe.arrays_mut()[ai][i] = orig + eps;
            let hi = f(&probe);
            probe.arrays_mut()[ai][i] = orig - eps;
            let lo = f(&probe);
            probe.arrays_mut()[ai][i] = orig;
            grad.push((hi - lo) / (2.0 * eps));
        }
    }
    grad
}

/// Flattens per-array analytic gradients in the same order as
/// [`param_central_diff`].
pub fn flatten_grads(grads: &[Vec<f64>]) -> Vec<f64> {
    grads.iter().flatten().copied().collect()
}

/// Deterministic xorshift stream for test inputs, independent of the crate's
/// RNG choices.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.max(1))
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + u * (hi - lo)
    }

    pub fn usize_below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Random probability row of length `c` (positive entries, sums to 1).
    pub fn prob_row(&mut self, c: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..c).map(|_| self.uniform(0.05, 1.0)).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}
