//! Reference computations for tests, written independently of `wwrt-core`.
//!
//! Nothing here shares code with the crate under test: the kernel oracle
//! integrates the gamma density numerically, the Kalman oracle conditions
//! the full joint Gaussian directly, and the toy-model oracle spells out
//! every term of the joint density with `statrs` distributions.

pub mod kalman;
pub mod kernel;
pub mod toy;

/// Total-variation distance between two distributions on the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `ln(sum(exp(xs)))` without overflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
