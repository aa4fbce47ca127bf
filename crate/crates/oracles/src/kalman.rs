//! Filtering moments of the second-difference trend model by conditioning
//! the joint Gaussian of all states and observations.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct JointGaussianFilter {
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
    /// `ln p(y_t | y_1..y_{t-1})` at observed weeks, 0 at missing ones.
    pub predictive: Vec<f64>,
    pub loglik: f64,
}

/// Writes every state as a linear combination of the two initial states and
/// the innovations, forms the joint Gaussian of `(x_1..x_T, y_1..y_T)` and
/// conditions on the observed entries.
///
/// The initial pair `(x_0, x_{-1})` is independent `N(psi, 1)` in each
/// coordinate; `x_t = 2 x_{t-1} - x_{t-2} + w_t`, `y_t = x_t + v_t`.
pub fn joint_gaussian_filter(
    values: &[Option<f64>],
    sigma_w: f64,
    sigma_v: f64,
    psi: f64,
) -> JointGaussianFilter {
    let n = values.len();
    // basis: [x_{-1}, x_0, w_1..w_n]
    let dim = n + 2;
    let mut coef: Vec<DVector<f64>> = Vec::with_capacity(n + 2);
    let mut e = DVector::zeros(dim);
    e[0] = 1.0;
    coef.push(e.clone());
    let mut e = DVector::zeros(dim);
    e[1] = 1.0;
    coef.push(e);
    for t in 0..n {
        let mut c = &coef[t + 1] * 2.0 - &coef[t];
        c[t + 2] += 1.0;
        coef.push(c);
    }
    let mut basis_cov = DMatrix::zeros(dim, dim);
    basis_cov[(0, 0)] = 1.0;
    basis_cov[(1, 1)] = 1.0;
    for t in 0..n {
        basis_cov[(t + 2, t + 2)] = sigma_w * sigma_w;
    }
    let basis_mean = {
        let mut m = DVector::zeros(dim);
        m[0] = psi;
        m[1] = psi;
        m
    };
    // state x_{t+1} for t in 0..n is coef[t + 2]
    let a = DMatrix::from_fn(n, dim, |t, j| coef[t + 2][j]);
    let x_mean = &a * &basis_mean;
    let x_cov = &a * &basis_cov * a.transpose();
    let y_cov = &x_cov + DMatrix::identity(n, n) * (sigma_v * sigma_v);

    let mut means = vec![0.0; n];
    let mut vars = vec![0.0; n];
    let mut predictive = vec![0.0; n];
    for t in 0..n {
        let seen: Vec<usize> = (0..=t).filter(|&s| values[s].is_some()).collect();
        let prior: Vec<usize> = (0..t).filter(|&s| values[s].is_some()).collect();
        let (m, v) = condition(&x_mean, &x_cov, &y_cov, values, &seen, t, false);
        means[t] = m;
        vars[t] = v;
        if let Some(y) = values[t] {
            let (m, v) = condition(&x_mean, &x_cov, &y_cov, values, &prior, t, true);
            predictive[t] = -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (y - m).powi(2) / v);
        }
    }

    let obs: Vec<usize> = (0..n).filter(|&s| values[s].is_some()).collect();
    let loglik = if obs.is_empty() {
        0.0
    } else {
        let k = obs.len();
        let s = DMatrix::from_fn(k, k, |i, j| y_cov[(obs[i], obs[j])]);
        let r = DVector::from_fn(k, |i, _| values[obs[i]].unwrap() - x_mean[obs[i]]);
        let chol = s.cholesky().expect("positive definite");
        let sol = chol.solve(&r);
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        -0.5 * (k as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + r.dot(&sol))
    };
    JointGaussianFilter {
        means,
        vars,
        predictive,
        loglik,
    }
}

/// Mean and variance of `x_t` (or of `y_t` when `observation`) given the
/// observations at `given`.
fn condition(
    x_mean: &DVector<f64>,
    x_cov: &DMatrix<f64>,
    y_cov: &DMatrix<f64>,
    values: &[Option<f64>],
    given: &[usize],
    t: usize,
    observation: bool,
) -> (f64, f64) {
    let own_var = if observation { y_cov[(t, t)] } else { x_cov[(t, t)] };
    if given.is_empty() {
        return (x_mean[t], own_var);
    }
    let k = given.len();
    let s = DMatrix::from_fn(k, k, |i, j| y_cov[(given[i], given[j])]);
    // cross-covariance of x_t (or y_t) with y_s equals Cov(x_t, x_s) for s != t
    let c = DVector::from_fn(k, |i, _| x_cov[(t, given[i])]);
    let r = DVector::from_fn(k, |i, _| values[given[i]].unwrap() - x_mean[given[i]]);
    let chol = s.cholesky().expect("positive definite");
    let sr = chol.solve(&r);
    let sc = chol.solve(&c);
    (x_mean[t] + c.dot(&sr), own_var - c.dot(&sc))
}
