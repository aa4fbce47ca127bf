//! Renewal model linking a latent transmission index to weekly viral loads.
//!
//! The latent index `z_t` follows a Gaussian random walk and maps to the
//! reproduction number through a scaled softplus. Infections renew by a
//! Poisson convolution over the generation kernel, the shedding kernel maps
//! infections to an expected load, and observed loads are log-normal around
//! that expectation with a mean correction so that `E[y | pi] = pi`.
//!
//! Weeks are indexed from 0 in this API; week 0 is the anchored initial week.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::kernels::{KernelKind, KernelWeights};
use crate::series::WeeklySeries;

/// Floor applied to the Poisson renewal mean.
pub const LAMBDA_FLOOR: f64 = 1e-6;
/// Floor applied to the shedding convolution before scaling by beta.
pub const LOAD_FLOOR: f64 = 1e-6;
/// Smallest admissible homoscedastic observation SD.
pub const SIGMA_Y_MIN: f64 = 1e-3;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    pub z: Vec<f64>,
    pub infections: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarParams {
    pub k: f64,
    pub sigma_eps: f64,
    pub beta: f64,
    /// Shared natural-log observation SD; `None` when the data carry
    /// per-week SDs (mode B).
    pub sigma_y: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Raw loads with a single estimated observation SD.
    #[serde(rename = "A")]
    RawHomoscedastic,
    /// Filtered loads with known per-week observation SDs.
    #[serde(rename = "B")]
    FilteredKnownVar,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum HistoryPadding {
    /// Infections before the first week equal the first week's count.
    #[default]
    RepeatFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSpec {
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
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            z1_mean: 1.0,
            z1_sd: 0.5,
            sigma_eps_log_mean: 0.1f64.ln(),
            sigma_eps_log_sd: 0.5,
            k_log_mean: 5f64.ln(),
            k_log_sd: 0.75,
            k_upper: 50.0,
            log_beta_mean: 10f64.ln(),
            log_beta_sd: 1.0,
            sigma_y_mean: 0.4,
            sigma_y_sd: 0.2,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let sds = [
            ("z1_sd", self.z1_sd),
            ("sigma_eps_log_sd", self.sigma_eps_log_sd),
            ("k_log_sd", self.k_log_sd),
            ("log_beta_sd", self.log_beta_sd),
            ("sigma_y_sd", self.sigma_y_sd),
            ("k_upper", self.k_upper),
        ];
        for (name, v) in sds {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        let means = [
            self.z1_mean,
            self.sigma_eps_log_mean,
            self.k_log_mean,
            self.log_beta_mean,
            self.sigma_y_mean,
        ];
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter("prior means must be finite".into()));
        }
        Ok(())
    }

    pub fn ln_prior_z1(&self, z1: f64) -> f64 {
        normal_ln_pdf(z1, self.z1_mean, self.z1_sd)
    }

    pub fn ln_prior_sigma_eps(&self, sigma_eps: f64) -> f64 {
        lognormal_ln_pdf(sigma_eps, self.sigma_eps_log_mean, self.sigma_eps_log_sd)
    }

    /// Log-normal truncated to `k <= k_upper`.
    pub fn ln_prior_k(&self, k: f64) -> f64 {
        if !(k > 0.0) || k > self.k_upper {
            return f64::NEG_INFINITY;
        }
        lognormal_ln_pdf(k, self.k_log_mean, self.k_log_sd)
            - ln_normal_cdf((self.k_upper.ln() - self.k_log_mean) / self.k_log_sd)
    }

    pub fn ln_prior_beta(&self, beta: f64) -> f64 {
        lognormal_ln_pdf(beta, self.log_beta_mean, self.log_beta_sd)
    }

    /// Normal truncated to `(SIGMA_Y_MIN, inf)`.
    pub fn ln_prior_sigma_y(&self, sigma_y: f64) -> f64 {
        if !(sigma_y > SIGMA_Y_MIN) {
            return f64::NEG_INFINITY;
        }
        normal_ln_pdf(sigma_y, self.sigma_y_mean, self.sigma_y_sd)
            - ln_normal_cdf((self.sigma_y_mean - SIGMA_Y_MIN) / self.sigma_y_sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub gen_kernel: KernelWeights,
    pub shed_kernel: KernelWeights,
    pub anchor_mean: f64,
    pub mode: Mode,
    pub priors: PriorSpec,
    #[serde(default)]
    pub history_padding: HistoryPadding,
}

impl ModelConfig {
    pub fn new(
        gen_kernel: KernelWeights,
        shed_kernel: KernelWeights,
        anchor_mean: f64,
        mode: Mode,
        priors: PriorSpec,
    ) -> Result<Self> {
        let config = Self {
            gen_kernel,
            shed_kernel,
            anchor_mean,
            mode,
            priors,
            history_padding: HistoryPadding::RepeatFirst,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gen_kernel.kind() != KernelKind::Generation {
            return Err(Error::InvalidParameter("gen_kernel must be a generation kernel".into()));
        }
        if self.shed_kernel.kind() != KernelKind::Shedding {
            return Err(Error::InvalidParameter("shed_kernel must be a shedding kernel".into()));
        }
        if !(self.anchor_mean > 0.0 && self.anchor_mean.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "anchor mean must be positive, got {}",
                self.anchor_mean
            )));
        }
        self.priors.validate()
    }

    /// Checks that `data` can be fitted under this configuration.
    pub fn check_data(&self, data: &WeeklySeries) -> Result<()> {
        if data.is_empty() {
            return Err(Error::TooShort("series has no weeks".into()));
        }
        if data.unit().is_log10() {
            return Err(Error::UnitMismatch {
                expected: data.unit().linear(),
                found: data.unit(),
            });
        }
        if self.mode == Mode::FilteredKnownVar && data.obs_sd().is_none() {
            return Err(Error::MissingObsSd);
        }
        Ok(())
    }
}

pub fn normal_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let u = (x - mean) / sd;
    -0.5 * u * u - sd.ln() - LN_SQRT_2PI
}

pub fn lognormal_ln_pdf(x: f64, log_mean: f64, log_sd: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NEG_INFINITY;
    }
    let lx = x.ln();
    normal_ln_pdf(lx, log_mean, log_sd) - lx
}

pub fn ln_normal_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
}

pub fn poisson_ln_pmf(count: u64, mean: f64) -> f64 {
    let n = count as f64;
    if count == 0 {
        -mean
    } else {
        n * mean.ln() - mean - ln_gamma(n + 1.0)
    }
}

/// `log(1 + exp(k z)) / k`, evaluated without overflow.
pub fn softplus_link(z: f64, k: f64) -> f64 {
    let kz = k * z;
    if kz > 30.0 {
        z + (-kz).exp().ln_1p() / k
    } else {
        kz.exp().ln_1p() / k
    }
}

/// Infection count at week `t - lag` with pre-series weeks padded by week 0.
#[inline]
pub fn lagged(infections: &[u64], t: usize, lag: usize) -> u64 {
    infections[t.saturating_sub(lag)]
}

/// `sum_g w_g I_{t-g}` over the generation kernel.
pub fn generation_convolution(infections: &[u64], gen: &KernelWeights, t: usize) -> f64 {
    gen.lags().map(|(g, w)| w * lagged(infections, t, g) as f64).sum()
}

/// `sum_d w_d I_{t-d}` over the shedding kernel.
pub fn shedding_convolution(infections: &[u64], shed: &KernelWeights, t: usize) -> f64 {
    shed.lags().map(|(d, w)| w * lagged(infections, t, d) as f64).sum()
}

/// Renewal mean `R_t sum_g w_g I_{t-g}` for `t >= 1`; week 0 is anchored.
pub fn renewal_mean(
    infections: &[u64],
    gen: &KernelWeights,
    reproduction: f64,
    t: usize,
) -> Result<f64> {
    if t == 0 {
        return Err(Error::AnchoredWeek(0));
    }
    if t >= infections.len() {
        return Err(Error::Dimension(format!(
            "week {t} beyond {} infections",
            infections.len()
        )));
    }
    Ok(reproduction * generation_convolution(infections, gen, t))
}

/// Expected load `beta sum_d w_d I_{t-d}`, floored at `beta * LOAD_FLOOR`.
pub fn expected_load(infections: &[u64], shed: &KernelWeights, beta: f64, t: usize) -> f64 {
    beta * shedding_convolution(infections, shed, t).max(LOAD_FLOOR)
}

/// Log-normal log-density at `y` with mean-corrected location `log(pi) - sigma^2 / 2`.
pub fn obs_logdensity(y: f64, pi: f64, sigma: f64) -> Result<f64> {
    if !(y > 0.0 && pi > 0.0 && sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "observation density needs positive y, pi, sigma (got {y}, {pi}, {sigma})"
        )));
    }
    Ok(obs_ln_density_unchecked(y.ln(), pi.ln(), sigma))
}

#[inline]
pub(crate) fn obs_ln_density_unchecked(ln_y: f64, ln_pi: f64, sigma: f64) -> f64 {
    let mu = ln_pi - 0.5 * sigma * sigma;
    let u = (ln_y - mu) / sigma;
    -ln_y - sigma.ln() - LN_SQRT_2PI - 0.5 * u * u
}

/// The joint log-density broken into its additive groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointTerms {
    /// Priors of `k`, `sigma_eps`, `beta` and (mode A) `sigma_y`.
    pub scalar_prior: f64,
    /// `z_1` prior plus the random-walk increments.
    pub latent_walk: f64,
    /// Anchor at week 0 plus Poisson renewal terms.
    pub infections: f64,
    pub observations: f64,
}

impl JointTerms {
    pub fn total(&self) -> f64 {
        self.scalar_prior + self.latent_walk + self.infections + self.observations
    }
}

pub fn joint_logdensity(
    state: &LatentState,
    params: &ScalarParams,
    data: &WeeklySeries,
    config: &ModelConfig,
) -> Result<f64> {
    joint_terms(state, params, data, config).map(|t| t.total())
}

pub fn joint_terms(
    state: &LatentState,
    params: &ScalarParams,
    data: &WeeklySeries,
    config: &ModelConfig,
) -> Result<JointTerms> {
    let n = data.len();
    if state.z.len() != n || state.infections.len() != n {
        return Err(Error::Dimension(format!(
            "state has {} z and {} infections for {n} weeks",
            state.z.len(),
            state.infections.len()
        )));
    }
    config.check_data(data)?;
    let priors = &config.priors;

    let mut scalar_prior = priors.ln_prior_k(params.k)
        + priors.ln_prior_sigma_eps(params.sigma_eps)
        + priors.ln_prior_beta(params.beta);
    let obs_sd: Vec<f64> = match config.mode {
        Mode::RawHomoscedastic => {
            let s = params.sigma_y.ok_or_else(|| {
                Error::InvalidParameter("mode A needs a shared sigma_y".into())
            })?;
            scalar_prior += priors.ln_prior_sigma_y(s);
            vec![s; n]
        }
        Mode::FilteredKnownVar => data.obs_sd().ok_or(Error::MissingObsSd)?.to_vec(),
    };

    let mut latent_walk = priors.ln_prior_z1(state.z[0]);
    for t in 1..n {
        latent_walk += normal_ln_pdf(state.z[t], state.z[t - 1], params.sigma_eps);
    }

    let infections_ref = &state.infections;
    let mut infections = poisson_ln_pmf(infections_ref[0], config.anchor_mean);
    for t in 1..n {
        let r = softplus_link(state.z[t], params.k);
        let lambda = renewal_mean(infections_ref, &config.gen_kernel, r, t)?.max(LAMBDA_FLOOR);
        infections += poisson_ln_pmf(infections_ref[t], lambda);
    }

    let mut observations = 0.0;
    for (t, y) in data.values().iter().enumerate() {
        if let Some(y) = *y {
            let pi = expected_load(infections_ref, &config.shed_kernel, params.beta, t);
            observations += obs_logdensity(y, pi, obs_sd[t])?;
        }
    }

    Ok(JointTerms {
        scalar_prior,
        latent_walk,
        infections,
        observations,
    })
}

/// Upper bound on `|softplus_link(z, k) - max(z, 0)|`.
pub fn softplus_gap_bound(k: f64) -> f64 {
    LN_2 / k
}
