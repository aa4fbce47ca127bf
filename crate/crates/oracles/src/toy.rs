//! Term-by-term joint density of the renewal model for short series, and
//! exhaustive enumeration of the infection posterior of a 3-week toy.

use statrs::distribution::{Continuous, ContinuousCDF, Discrete, LogNormal, Normal, Poisson};

use crate::log_sum_exp;

/// Model constants, given as plain numbers.
#[derive(Debug, Clone)]
pub struct ToyModel {
    /// Generation weights for lags `1..`.
    pub gen: Vec<f64>,
    /// Shedding weights for lags `0..`.
    pub shed: Vec<f64>,
    pub anchor: f64,
    pub z1_mean: f64,
    pub z1_sd: f64,
    pub sigma_eps_log_mean: f64,
    pub sigma_eps_log_sd: f64,
    pub k_log_mean: f64,
    pub k_log_sd: f64,
    pub k_upper: f64,
    pub log_beta_mean: f64,
    pub log_beta_sd: f64,
    pub sigma_y_mean: f64,
    pub sigma_y_sd: f64,
    pub sigma_y_min: f64,
}

#[derive(Debug, Clone)]
pub struct ToyState {
    pub k: f64,
    pub sigma_eps: f64,
    pub beta: f64,
    /// `None` when `obs_sd` supplies per-week SDs.
    pub sigma_y: Option<f64>,
    pub z: Vec<f64>,
    pub infections: Vec<u64>,
}

/// Infections at week `s` where weeks before 0 repeat week 0.
fn history(inf: &[u64], s: i64) -> f64 {
    inf[s.max(0) as usize] as f64
}

pub fn reproduction(z: f64, k: f64) -> f64 {
    (1.0 + (k * z).exp()).ln() / k
}

/// Each prior, transition and observation term evaluated separately with
/// `statrs` distributions and summed.
pub fn joint_log_density(
    model: &ToyModel,
    state: &ToyState,
    y: &[Option<f64>],
    obs_sd: Option<&[f64]>,
) -> f64 {
    let n = y.len();
    let inf = &state.infections;
    let mut total = 0.0;

    let sigma_eps_prior = LogNormal::new(model.sigma_eps_log_mean, model.sigma_eps_log_sd).unwrap();
    total += sigma_eps_prior.ln_pdf(state.sigma_eps);
    let k_prior = LogNormal::new(model.k_log_mean, model.k_log_sd).unwrap();
    total += k_prior.ln_pdf(state.k) - k_prior.cdf(model.k_upper).ln();
    let beta_prior = LogNormal::new(model.log_beta_mean, model.log_beta_sd).unwrap();
    total += beta_prior.ln_pdf(state.beta);
    if let Some(sy) = state.sigma_y {
        let p = Normal::new(model.sigma_y_mean, model.sigma_y_sd).unwrap();
        total += p.ln_pdf(sy) - (1.0 - p.cdf(model.sigma_y_min)).ln();
    }

    total += Normal::new(model.z1_mean, model.z1_sd).unwrap().ln_pdf(state.z[0]);
    for t in 1..n {
        total += Normal::new(state.z[t - 1], state.sigma_eps).unwrap().ln_pdf(state.z[t]);
    }

    total += Poisson::new(model.anchor).unwrap().ln_pmf(inf[0]);
    for t in 1..n {
        let mut conv = 0.0;
        for (i, w) in model.gen.iter().enumerate() {
            conv += w * history(inf, t as i64 - (i as i64 + 1));
        }
        let lambda = (reproduction(state.z[t], state.k) * conv).max(1e-6);
        total += Poisson::new(lambda).unwrap().ln_pmf(inf[t]);
    }

    for t in 0..n {
        let Some(yt) = y[t] else { continue };
        let mut conv = 0.0;
        for (d, w) in model.shed.iter().enumerate() {
            conv += w * history(inf, t as i64 - d as i64);
        }
        let pi = state.beta * conv.max(1e-6);
        let sigma = match obs_sd {
            Some(sd) => sd[t],
            None => state.sigma_y.unwrap(),
        };
        let dist = LogNormal::new(pi.ln() - sigma * sigma / 2.0, sigma).unwrap();
        total += dist.ln_pdf(yt);
    }
    total
}

/// All `I` in `[0, cap]^3` with normalized posterior probabilities, in
/// lexicographic order of `(I_1, I_2, I_3)`.
pub fn enumerate_infections(
    model: &ToyModel,
    state: &ToyState,
    y: &[Option<f64>],
    cap: u64,
) -> Vec<([u64; 3], f64)> {
    assert_eq!(y.len(), 3);
    let mut states = Vec::new();
    let mut logs = Vec::new();
    let mut s = state.clone();
    for a in 0..=cap {
        for b in 0..=cap {
            for c in 0..=cap {
                s.infections = vec![a, b, c];
                logs.push(joint_log_density(model, &s, y, None));
                states.push([a, b, c]);
            }
        }
    }
    normalize(states, logs)
}

/// As [`enumerate_infections`], with `beta` integrated out on a log-spaced
/// grid by the trapezoid rule in `ln beta`.
pub fn enumerate_infections_beta_marginal(
    model: &ToyModel,
    state: &ToyState,
    y: &[Option<f64>],
    cap: u64,
    ln_beta_range: (f64, f64),
    nodes: usize,
) -> Vec<([u64; 3], f64)> {
    assert_eq!(y.len(), 3);
    let (lo, hi) = ln_beta_range;
    let h = (hi - lo) / (nodes - 1) as f64;
    let mut states = Vec::new();
    let mut logs = Vec::new();
    let mut s = state.clone();
    let mut terms = Vec::with_capacity(nodes);
    for a in 0..=cap {
        for b in 0..=cap {
            for c in 0..=cap {
                s.infections = vec![a, b, c];
                terms.clear();
                for j in 0..nodes {
                    let lb = lo + j as f64 * h;
                    s.beta = lb.exp();
                    let w: f64 = if j == 0 || j == nodes - 1 { 0.5 } else { 1.0 };
                    // d beta = beta d ln(beta)
                    terms.push(joint_log_density(model, &s, y, None) + lb + w.ln());
                }
                logs.push(log_sum_exp(&terms));
                states.push([a, b, c]);
            }
        }
    }
    normalize(states, logs)
}

fn normalize(states: Vec<[u64; 3]>, logs: Vec<f64>) -> Vec<([u64; 3], f64)> {
    let z = log_sum_exp(&logs);
    states
        .into_iter()
        .zip(logs)
        .map(|(s, l)| (s, (l - z).exp()))
        .collect()
}
