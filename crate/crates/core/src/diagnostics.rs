//! Convergence diagnostics and posterior summaries.
//!
//! R-hat is computed on split, rank-normalized chains. ESS uses the
//! multi-chain autocorrelation estimator with the initial positive and
//! monotone sequence truncation of paired sums. Quantiles interpolate
//! linearly between order statistics.

use std::io::Write;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::mcmc::PosteriorDraws;
use crate::model::ModelConfig;

/// Scalars above this split R-hat mark the fit as not converged.
pub const RHAT_THRESHOLD: f64 = 1.05;

fn check_chains<C: AsRef<[f64]>>(chains: &[C]) -> Result<usize> {
    if chains.len() < 2 {
        return Err(Error::InvalidParameter("diagnostics need at least 2 chains".into()));
    }
    let n = chains[0].as_ref().len();
    if chains.iter().any(|c| c.as_ref().len() != n) {
        return Err(Error::Dimension("chains differ in length".into()));
    }
    if n < 4 {
        return Err(Error::TooShort(format!("chains have {n} draws, need at least 4")));
    }
    Ok(n)
}

/// Average ranks (1-based) of `values`, ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Maps pooled draws to normal scores through `(r - 3/8) / (S + 1/4)`.
pub fn rank_normalize(values: &[f64]) -> Vec<f64> {
    let std_normal = Normal::standard();
    let s = values.len() as f64;
    average_ranks(values)
        .into_iter()
        .map(|r| std_normal.inverse_cdf((r - 0.375) / (s + 0.25)))
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Between/within variance ratio on equal-length chains.
fn rhat_classic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let b_over_n = sample_var(&means);
    if w == 0.0 {
        return if b_over_n > 0.0 { f64::INFINITY } else { f64::NAN };
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Rank-normalized split R-hat. `NaN` when every draw is identical.
pub fn split_rhat<C: AsRef<[f64]>>(chains: &[C]) -> Result<f64> {
    let n = check_chains(chains)?;
    let half = n / 2;
    let mut pooled = Vec::with_capacity(chains.len() * 2 * half);
    for c in chains {
        let c = c.as_ref();
        pooled.extend_from_slice(&c[..half]);
        pooled.extend_from_slice(&c[n - half..]);
    }
    if pooled.iter().all(|v| *v == pooled[0]) {
        return Ok(f64::NAN);
    }
    let z = rank_normalize(&pooled);
    let splits: Vec<Vec<f64>> = z.chunks(half).map(<[f64]>::to_vec).collect();
    Ok(rhat_classic(&splits))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EssMcse {
    pub ess: f64,
    pub mcse: f64,
    /// `mcse / |mean|`, or the absolute MCSE when the mean is zero.
    pub rel_mcse: f64,
    /// `rel_mcse` holds the absolute MCSE.
    pub absolute: bool,
    /// The draws are constant and ESS is undefined.
    pub degenerate: bool,
}

/// Lag-`lag` autocovariance of one chain (divisor `n`).
fn autocov(c: &[f64], m: f64, lag: usize) -> f64 {
    let n = c.len();
    c[..n - lag]
        .iter()
        .zip(&c[lag..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64
}

/// Multi-chain effective sample size; `NaN` for constant draws.
pub fn effective_sample_size<C: AsRef<[f64]>>(chains: &[C]) -> Result<f64> {
    let n = check_chains(chains)?;
    let m = chains.len();
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(c.as_ref())).collect();
    let acov0: Vec<f64> = chains
        .iter()
        .zip(&chain_means)
        .map(|(c, &mu)| autocov(c.as_ref(), mu, 0))
        .collect();
    let nf = n as f64;
    let mean_var = mean(&acov0) * nf / (nf - 1.0);
    let var_plus = mean_var * (nf - 1.0) / nf + sample_var(&chain_means);
    if !(var_plus > 0.0) || mean_var == 0.0 {
        return Ok(f64::NAN);
    }
    let rho = |lag: usize| -> f64 {
        let mean_acov = chains
            .iter()
            .zip(&chain_means)
            .map(|(c, &mu)| autocov(c.as_ref(), mu, lag))
            .sum::<f64>()
            / m as f64;
        1.0 - (mean_var - mean_acov) / var_plus
    };

    // Paired sums P_k = rho(2k) + rho(2k+1) while positive, forced monotone.
    let mut sum_pairs = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut t = 0;
    while t + 1 < n {
        let mut pair = rho(t) + rho(t + 1);
        if pair < 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        sum_pairs += pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / (m as f64 * nf).log10());
    Ok(m as f64 * nf / tau)
}

pub fn ess_and_mcse<C: AsRef<[f64]>>(chains: &[C]) -> Result<EssMcse> {
    let ess = effective_sample_size(chains)?;
    let all: Vec<f64> = chains.iter().flat_map(|c| c.as_ref().iter().copied()).collect();
    let mu = mean(&all);
    let sd = sample_var(&all).sqrt();
    if ess.is_nan() {
        return Ok(EssMcse {
            ess,
            mcse: f64::NAN,
            rel_mcse: f64::NAN,
            absolute: mu == 0.0,
            degenerate: true,
        });
    }
    let mcse = sd / ess.sqrt();
    let absolute = mu == 0.0;
    Ok(EssMcse {
        ess,
        mcse,
        rel_mcse: if absolute { mcse } else { mcse / mu.abs() },
        absolute,
        degenerate: false,
    })
}

/// Type-7 quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub median: f64,
    pub ci_high: f64,
    pub rhat: f64,
    pub ess: f64,
    pub rel_mcse: f64,
    pub mcse_absolute: bool,
    pub degenerate: bool,
}

/// Mean, SD and quantiles of pooled draws; no convergence diagnostics.
pub fn describe(name: &str, pooled: &[f64]) -> ParamSummary {
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mu = mean(&sorted);
    let sd = if sorted.len() > 1 { sample_var(&sorted).sqrt() } else { 0.0 };
    ParamSummary {
        name: name.to_string(),
        mean: mu,
        sd,
        ci_low: quantile_sorted(&sorted, 0.025),
        median: quantile_sorted(&sorted, 0.5),
        ci_high: quantile_sorted(&sorted, 0.975),
        rhat: f64::NAN,
        ess: f64::NAN,
        rel_mcse: f64::NAN,
        mcse_absolute: false,
        degenerate: sd == 0.0,
    }
}

pub fn summarize_chains<C: AsRef<[f64]>>(name: &str, chains: &[C]) -> Result<ParamSummary> {
    let pooled: Vec<f64> = chains.iter().flat_map(|c| c.as_ref().iter().copied()).collect();
    if pooled.is_empty() {
        return Err(Error::TooShort(format!("no draws for {name}")));
    }
    let mut s = describe(name, &pooled);
    s.rhat = split_rhat(chains)?;
    let e = ess_and_mcse(chains)?;
    s.ess = e.ess;
    s.rel_mcse = e.rel_mcse;
    s.mcse_absolute = e.absolute;
    s.degenerate = e.degenerate;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorSummary {
    pub scalars: Vec<ParamSummary>,
    pub reproduction: Vec<ParamSummary>,
    pub infections: Vec<ParamSummary>,
    pub expected_load: Vec<ParamSummary>,
}

impl PosteriorSummary {
    pub fn max_scalar_rhat(&self) -> f64 {
        self.scalars.iter().map(|s| s.rhat).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Every scalar R-hat is finite and at most `threshold`.
    pub fn converged(&self, threshold: f64) -> bool {
        self.scalars.iter().all(|s| s.rhat.is_finite() && s.rhat <= threshold)
    }

    pub fn scalar(&self, name: &str) -> Option<&ParamSummary> {
        self.scalars.iter().find(|s| s.name == name)
    }

    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["name", "mean", "sd", "ci_low", "ci_high", "rhat", "ess", "rel_mcse"])?;
        for s in &self.scalars {
            w.write_record([
                s.name.clone(),
                s.mean.to_string(),
                s.sd.to_string(),
                s.ci_low.to_string(),
                s.ci_high.to_string(),
                s.rhat.to_string(),
                s.ess.to_string(),
                s.rel_mcse.to_string(),
            ])?;
        }
        flush(w)
    }

    /// Per-week trajectory table with 1-based week numbers.
    pub fn write_trajectory_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["week", "R_mean", "R_lo", "R_hi", "I_mean", "I_lo", "I_hi"])?;
        for (t, (r, i)) in self.reproduction.iter().zip(&self.infections).enumerate() {
            w.write_record([
                (t + 1).to_string(),
                r.mean.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
                i.mean.to_string(),
                i.ci_low.to_string(),
                i.ci_high.to_string(),
            ])?;
        }
        flush(w)
    }
}

fn flush<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|source| Error::Io {
        path: "<csv output>".into(),
        source,
    })
}

/// Scalar and per-week summaries pooled across chains.
pub fn summarize(draws: &PosteriorDraws, config: &ModelConfig) -> Result<PosteriorSummary> {
    if draws.chains.iter().any(|c| c.is_empty()) {
        return Err(Error::TooShort("posterior has an empty chain".into()));
    }
    let scalars = draws
        .scalar_names()
        .into_iter()
        .map(|name| {
            let chains = draws
                .scalar_chains(name)
                .ok_or_else(|| Error::InvalidParameter(format!("no draws for {name}")))?;
            summarize_chains(name, &chains)
        })
        .collect::<Result<Vec<_>>>()?;
    let weekly = |label: &str, f: &dyn Fn(usize) -> Vec<Vec<f64>>| {
        (0..draws.n_weeks)
            .map(|t| summarize_chains(&format!("{label}[{}]", t + 1), &f(t)))
            .collect::<Result<Vec<_>>>()
    };
    Ok(PosteriorSummary {
        scalars,
        reproduction: weekly("R", &|t| draws.reproduction_chains(t))?,
        infections: weekly("I", &|t| draws.infection_chains(t))?,
        expected_load: weekly("pi", &|t| draws.expected_load_chains(config, t))?,
    })
}
