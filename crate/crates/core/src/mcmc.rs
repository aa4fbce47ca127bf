//! Componentwise adaptive random-walk Metropolis for the renewal model.
//!
//! Each iteration visits, in order: the scalar parameters (random walks on
//! the log scale), every `z_t`, every `I_t` (symmetric integer random walk),
//! and a joint level move that rescales all infections by a common factor
//! while dividing `beta` by it. The level move follows the ridge along which
//! the observations only constrain the product of `beta` and the infection
//! level; single-site updates cross it very slowly.
//!
//! Every block carries its own proposal scale, adapted during warm-up by a
//! Robbins-Monro recursion toward the acceptance target and frozen after.
//! Chains are independent and seeded from `(seed, chain index)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{
    joint_logdensity, softplus_link, LatentState,
    Mode, ModelConfig, ScalarParams, LAMBDA_FLOOR, LOAD_FLOOR, SIGMA_Y_MIN,
};
use crate::series::WeeklySeries;
use crate::simulate::inverse_softplus;

const MAX_INIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcSettings {
    pub n_chains: usize,
    pub n_iter: usize,
    pub n_warmup: usize,
    pub thin: usize,
    pub seed: u64,
    pub adapt_target: f64,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_iter: 60_000,
            n_warmup: 30_000,
            thin: 10,
            seed: 1,
            adapt_target: 0.44,
        }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains < 2 {
            return Err(Error::InvalidParameter("at least 2 chains are required".into()));
        }
        if self.n_warmup >= self.n_iter {
            return Err(Error::InvalidParameter(format!(
                "warm-up ({}) must be shorter than the run ({})",
                self.n_warmup, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thin must be at least 1".into()));
        }
        if !(self.adapt_target > 0.0 && self.adapt_target < 1.0) {
            return Err(Error::InvalidParameter("adapt_target must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.n_iter - self.n_warmup).div_ceil(self.thin)
    }
}

/// Which blocks the sampler updates. Blocks switched off keep their
/// initial values for the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Blocks {
    pub k: bool,
    pub sigma_eps: bool,
    pub beta: bool,
    pub sigma_y: bool,
    pub z: bool,
    pub infections: bool,
    pub level: bool,
}

impl Default for Blocks {
    fn default() -> Self {
        Self {
            k: true,
            sigma_eps: true,
            beta: true,
            sigma_y: true,
            z: true,
            infections: true,
            level: true,
        }
    }
}

/// Level and `beta` moves per sweep.
const LEVEL_REPEATS: usize = 4;

/// Extra controls for [`run_chains_with`].
#[derive(Debug, Clone, Default)]
pub struct SamplerControl {
    pub blocks: Blocks,
    /// Fixed starting point for every chain instead of [`initialize_chain`].
    pub init: Option<(ScalarParams, LatentState)>,
    /// Infections above this count get zero target mass.
    pub infection_cap: Option<u64>,
}

/// Robbins-Monro proposal-scale adaptation for one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adapter {
    log_scale: f64,
    min_scale: f64,
    max_scale: f64,
    target: f64,
    frozen: bool,
    proposals: u64,
    accepted: u64,
}

impl Adapter {
    pub fn new(scale: f64, target: f64) -> Self {
        Self::with_bounds(scale, target, 1e-8, 1e8)
    }

    pub fn with_bounds(scale: f64, target: f64, min_scale: f64, max_scale: f64) -> Self {
        Self {
            log_scale: scale.clamp(min_scale, max_scale).ln(),
            min_scale,
            max_scale,
            target,
            frozen: false,
            proposals: 0,
            accepted: 0,
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Records one proposal outcome; before [`freeze`](Self::freeze) the
    /// scale moves by `(iteration + 1)^-0.6 * (accepted - target)` on the log scale.
    pub fn adapt(&mut self, accepted: bool, iteration: usize) {
        self.proposals += 1;
        self.accepted += accepted as u64;
        if !self.frozen {
            let gain = (iteration as f64 + 1.0).powf(-0.6);
            let signal = if accepted { 1.0 } else { 0.0 } - self.target;
            self.log_scale = (self.log_scale + gain * signal)
                .clamp(self.min_scale.ln(), self.max_scale.ln());
        }
    }

    /// Stops adaptation and resets the acceptance counters.
    pub fn freeze(&mut self) {
        self.frozen = true;
        self.proposals = 0;
        self.accepted = 0;
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposals == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposals as f64
        }
    }
}

/// Applies one round of outcomes to a set of adapters.
pub fn adapt_step_sizes(adapters: &mut [Adapter], accepted: &[bool], iteration: usize) {
    for (a, &acc) in adapters.iter_mut().zip(accepted) {
        a.adapt(acc, iteration);
    }
}

/// Post-warm-up acceptance rates per block. Per-week blocks are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRecord {
    pub k: f64,
    pub sigma_eps: f64,
    pub beta: f64,
    pub sigma_y: f64,
    pub z_mean: f64,
    pub infections_mean: f64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub iterations: Vec<usize>,
    pub k: Vec<f64>,
    pub sigma_eps: Vec<f64>,
    pub beta: Vec<f64>,
    /// Present in mode A only.
    pub sigma_y: Option<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub infections: Vec<Vec<u64>>,
    /// `softplus_link(z_t, k)` of the same draw.
    pub reproduction: Vec<Vec<f64>>,
    pub acceptance: AcceptanceRecord,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    /// Draws of a named scalar: `k`, `sigma_eps`, `beta` or `sigma_y`.
    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        match name {
            "k" => Some(&self.k),
            "sigma_eps" => Some(&self.sigma_eps),
            "beta" => Some(&self.beta),
            "sigma_y" => self.sigma_y.as_deref(),
            _ => None,
        }
    }

    pub fn params(&self, draw: usize) -> ScalarParams {
        ScalarParams {
            k: self.k[draw],
            sigma_eps: self.sigma_eps[draw],
            beta: self.beta[draw],
            sigma_y: self.sigma_y.as_ref().map(|s| s[draw]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub mode: Mode,
    pub n_weeks: usize,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    /// Scalar names in reporting order for this mode.
    pub fn scalar_names(&self) -> Vec<&'static str> {
        match self.mode {
            Mode::RawHomoscedastic => vec!["beta", "k", "sigma_eps", "sigma_y"],
            Mode::FilteredKnownVar => vec!["beta", "k", "sigma_eps"],
        }
    }

    /// Per-chain draws of a scalar.
    pub fn scalar_chains(&self, name: &str) -> Option<Vec<&[f64]>> {
        self.chains.iter().map(|c| c.scalar(name)).collect()
    }

    /// Per-chain draws of `R_t` at week `t`.
    pub fn reproduction_chains(&self, t: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.reproduction.iter().map(|r| r[t]).collect())
            .collect()
    }

    pub fn infection_chains(&self, t: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.infections.iter().map(|i| i[t] as f64).collect())
            .collect()
    }

    /// Per-chain draws of the expected load `pi_t`.
    pub fn expected_load_chains(&self, config: &ModelConfig, t: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| {
                c.infections
                    .iter()
                    .zip(&c.beta)
                    .map(|(inf, b)| crate::model::expected_load(inf, &config.shed_kernel, *b, t))
                    .collect()
            })
            .collect()
    }
}

/// Data in the form the sampler consumes.
struct Prepared {
    ln_y: Vec<f64>,
    present: Vec<bool>,
    present_idx: Vec<usize>,
    /// Mode B per-week SDs.
    known_sd: Option<Vec<f64>>,
}

impl Prepared {
    fn new(data: &WeeklySeries, config: &ModelConfig) -> Result<Self> {
        config.check_data(data)?;
        let ln_y = data
            .values()
            .iter()
            .map(|v| v.map_or(f64::NAN, f64::ln))
            .collect();
        let present: Vec<bool> = data.values().iter().map(Option::is_some).collect();
        let present_idx = present
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.then_some(i))
            .collect();
        let known_sd = match config.mode {
            Mode::RawHomoscedastic => None,
            Mode::FilteredKnownVar => Some(data.obs_sd().ok_or(Error::MissingObsSd)?.to_vec()),
        };
        Ok(Self {
            ln_y,
            present,
            present_idx,
            known_sd,
        })
    }
}

/// Draws a starting point: scalars from their priors, `z` near 1 and
/// infections following the shape of the observed series scaled so the
/// first week sits at the anchor mean.
pub fn initialize_chain<R: Rng + ?Sized>(
    data: &WeeklySeries,
    config: &ModelConfig,
    rng: &mut R,
) -> (ScalarParams, LatentState) {
    let p = &config.priors;
    let k = loop {
        let k: f64 = LogNormal::new(p.k_log_mean, p.k_log_sd).unwrap().sample(rng);
        if k <= p.k_upper {
            break k;
        }
    };
    let sigma_eps = LogNormal::new(p.sigma_eps_log_mean, p.sigma_eps_log_sd)
        .unwrap()
        .sample(rng);
    let beta = LogNormal::new(p.log_beta_mean, p.log_beta_sd).unwrap().sample(rng);
    let sigma_y = match config.mode {
        Mode::RawHomoscedastic => Some(loop {
            let s: f64 = Normal::new(p.sigma_y_mean, p.sigma_y_sd).unwrap().sample(rng);
            if s > SIGMA_Y_MIN {
                break s;
            }
        }),
        Mode::FilteredKnownVar => None,
    };

    let n = data.len();
    let z = (0..n)
        .map(|_| 1.0 + 0.02 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let shape = interpolated_log_shape(data.values());
    let infections = match shape {
        Some(shape) => shape
            .iter()
            .map(|s| (config.anchor_mean * (s - shape[0]).exp()).round().max(0.0) as u64)
            .collect(),
        None => vec![config.anchor_mean.round().max(0.0) as u64; n],
    };
    (
        ScalarParams {
            k,
            sigma_eps,
            beta,
            sigma_y,
        },
        LatentState { z, infections },
    )
}

/// Log of the observed series with gaps filled by linear interpolation in
/// log space and edges held flat. `None` when nothing is observed.
fn interpolated_log_shape(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<(usize, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|x| (i, x.ln())))
        .collect();
    let (&(first_i, first_v), &(last_i, last_v)) = (known.first()?, known.last()?);
    let mut out = vec![0.0; values.len()];
    for (i, o) in out.iter_mut().enumerate() {
        *o = if i <= first_i {
            first_v
        } else if i >= last_i {
            last_v
        } else {
            let pos = known.partition_point(|(j, _)| *j <= i);
            let (i0, v0) = known[pos - 1];
            if i0 == i {
                v0
            } else {
                let (i1, v1) = known[pos];
                v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
            }
        };
    }
    Some(out)
}

pub fn run_chains(
    data: &WeeklySeries,
    config: &ModelConfig,
    settings: &McmcSettings,
) -> Result<PosteriorDraws> {
    run_chains_with(data, config, settings, &SamplerControl::default())
}

pub fn run_chains_with(
    data: &WeeklySeries,
    config: &ModelConfig,
    settings: &McmcSettings,
    control: &SamplerControl,
) -> Result<PosteriorDraws> {
    settings.validate()?;
    config.validate()?;
    let prepared = Prepared::new(data, config)?;
    let chains = (0..settings.n_chains)
        .into_par_iter()
        .map(|chain| run_single_chain(data, &prepared, config, settings, control, chain))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws {
        mode: config.mode,
        n_weeks: data.len(),
        chains,
    })
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn run_single_chain(
    data: &WeeklySeries,
    prepared: &Prepared,
    config: &ModelConfig,
    settings: &McmcSettings,
    control: &SamplerControl,
    chain: usize,
) -> Result<ChainDraws> {
    let mut rng = chain_rng(settings.seed, chain);
    let (params, latent) = match &control.init {
        Some(init) => {
            let lp = joint_logdensity(&init.1, &init.0, data, config)?;
            if !lp.is_finite() {
                return Err(Error::Initialization(1));
            }
            init.clone()
        }
        None => {
            let mut attempt = 0;
            loop {
                let (params, mut latent) = initialize_chain(data, config, &mut rng);
                if let Some(cap) = control.infection_cap {
                    latent.infections.iter_mut().for_each(|i| *i = (*i).min(cap));
                }
                let lp = joint_logdensity(&latent, &params, data, config)?;
                if lp.is_finite() {
                    break (params, latent);
                }
                attempt += 1;
                if attempt >= MAX_INIT_ATTEMPTS {
                    return Err(Error::Initialization(attempt));
                }
            }
        }
    };

    let mut sampler = Sampler::new(prepared, config, params, latent, settings, control);
    let retained = settings.retained_per_chain();
    let n = sampler.n;
    let mut out = ChainDraws {
        iterations: Vec::with_capacity(retained),
        k: Vec::with_capacity(retained),
        sigma_eps: Vec::with_capacity(retained),
        beta: Vec::with_capacity(retained),
        sigma_y: (config.mode == Mode::RawHomoscedastic).then(|| Vec::with_capacity(retained)),
        z: Vec::with_capacity(retained),
        infections: Vec::with_capacity(retained),
        reproduction: Vec::with_capacity(retained),
        acceptance: AcceptanceRecord {
            k: f64::NAN,
            sigma_eps: f64::NAN,
            beta: f64::NAN,
            sigma_y: f64::NAN,
            z_mean: f64::NAN,
            infections_mean: f64::NAN,
            level: f64::NAN,
        },
    };

    for iter in 0..settings.n_iter {
        if iter == settings.n_warmup {
            sampler.freeze();
        }
        sampler.sweep(&mut rng, iter);
        if iter >= settings.n_warmup && (iter - settings.n_warmup).is_multiple_of(settings.thin) {
            out.iterations.push(iter);
            out.k.push(sampler.k);
            out.sigma_eps.push(sampler.sigma_eps);
            out.beta.push(sampler.beta);
            if let Some(s) = out.sigma_y.as_mut() {
                s.push(sampler.sigma_y);
            }
            out.z.push(sampler.z.clone());
            out.infections.push(sampler.inf.clone());
            out.reproduction
                .push((0..n).map(|t| softplus_link(sampler.z[t], sampler.k)).collect());
        }
    }
    out.acceptance = sampler.acceptance();
    Ok(out)
}

struct Sampler<'a> {
    data: &'a Prepared,
    config: &'a ModelConfig,
    blocks: Blocks,
    cap: u64,
    n: usize,
    /// `(lag, weight)` of the generation kernel.
    gen: Vec<(usize, f64)>,
    shed: Vec<(usize, f64)>,
    max_gen: usize,
    max_shed: usize,
    z: Vec<f64>,
    inf: Vec<u64>,
    k: f64,
    sigma_eps: f64,
    beta: f64,
    sigma_y: f64,
    /// `R_t`
    r: Vec<f64>,
    /// Generation convolution at each week (unused at week 0).
    gen_conv: Vec<f64>,
    /// Poisson mean of `I_t`; the anchor mean at week 0.
    lam: Vec<f64>,
    ln_lam: Vec<f64>,
    /// `ln max(shedding convolution, LOAD_FLOOR)`
    ln_shed: Vec<f64>,
    /// `ln(I_t!)`
    ln_fact: Vec<f64>,
    scratch: Scratch,
    k_ad: Adapter,
    k_fixed_r_ad: Adapter,
    sigma_eps_ad: Adapter,
    beta_ad: Adapter,
    sigma_y_ad: Adapter,
    z_ad: Vec<Adapter>,
    inf_ad: Vec<Adapter>,
    level_ad: Adapter,
}

/// Reusable buffers for proposals that touch many weeks.
#[derive(Default)]
struct Scratch {
    z: Vec<f64>,
    r: Vec<f64>,
    gen_conv: Vec<f64>,
    lam: Vec<f64>,
    ln_lam: Vec<f64>,
    ln_shed: Vec<f64>,
    ln_fact: Vec<f64>,
    inf: Vec<u64>,
}

/// Poisson log-pmf without the `ln(count!)` term.
#[inline]
fn poisson_core(count: u64, lam: f64, ln_lam: f64) -> f64 {
    count as f64 * ln_lam - lam
}

#[inline]
fn ln_factorial(count: u64) -> f64 {
    if count < 2 {
        0.0
    } else {
        ln_gamma(count as f64 + 1.0)
    }
}

#[inline]
fn floored_mean(r: f64, conv: f64) -> (f64, f64) {
    let lam = (r * conv).max(LAMBDA_FLOOR);
    (lam, lam.ln())
}

impl<'a> Sampler<'a> {
    fn new(
        data: &'a Prepared,
        config: &'a ModelConfig,
        params: ScalarParams,
        latent: LatentState,
        settings: &McmcSettings,
        control: &SamplerControl,
    ) -> Self {
        let n = latent.z.len();
        let target = settings.adapt_target;
        let inf_ad = latent
            .infections
            .iter()
            .map(|&i| Adapter::with_bounds((i as f64).sqrt().max(1.0), target, 1.0, 1e7))
            .collect();
        let gen: Vec<(usize, f64)> = config.gen_kernel.lags().collect();
        let shed: Vec<(usize, f64)> = config.shed_kernel.lags().collect();
        let mut s = Self {
            data,
            config,
            blocks: control.blocks,
            cap: control.infection_cap.unwrap_or(u64::MAX),
            n,
            max_gen: config.gen_kernel.max_lag(),
            max_shed: config.shed_kernel.max_lag(),
            gen,
            shed,
            z: latent.z,
            inf: latent.infections,
            k: params.k,
            sigma_eps: params.sigma_eps,
            beta: params.beta,
            sigma_y: params.sigma_y.unwrap_or(f64::NAN),
            r: vec![0.0; n],
            gen_conv: vec![0.0; n],
            lam: vec![0.0; n],
            ln_lam: vec![0.0; n],
            ln_shed: vec![0.0; n],
            ln_fact: vec![0.0; n],
            scratch: Scratch {
                z: vec![0.0; n],
                r: vec![0.0; n],
                gen_conv: vec![0.0; n],
                lam: vec![0.0; n],
                ln_lam: vec![0.0; n],
                ln_shed: vec![0.0; n],
                ln_fact: vec![0.0; n],
                inf: vec![0; n],
            },
            k_ad: Adapter::new(0.3, target),
            k_fixed_r_ad: Adapter::new(0.3, target),
            sigma_eps_ad: Adapter::new(0.2, target),
            beta_ad: Adapter::new(0.05, target),
            sigma_y_ad: Adapter::new(0.1, target),
            z_ad: vec![Adapter::new(0.05, target); n],
            inf_ad,
            level_ad: Adapter::new(0.02, target),
        };
        s.refresh();
        s
    }

    fn refresh(&mut self) {
        for t in 0..self.n {
            self.r[t] = softplus_link(self.z[t], self.k);
            if t == 0 {
                self.lam[0] = self.config.anchor_mean;
                self.ln_lam[0] = self.config.anchor_mean.ln();
            } else {
                self.gen_conv[t] = self.gen_conv_with(t, &self.inf);
                (self.lam[t], self.ln_lam[t]) = floored_mean(self.r[t], self.gen_conv[t]);
            }
            self.ln_shed[t] = self.shed_conv_with(t, &self.inf).max(LOAD_FLOOR).ln();
            self.ln_fact[t] = ln_factorial(self.inf[t]);
        }
    }

    #[inline]
    fn gen_conv_with(&self, t: usize, inf: &[u64]) -> f64 {
        self.gen
            .iter()
            .map(|&(g, w)| w * inf[t.saturating_sub(g)] as f64)
            .sum()
    }

    #[inline]
    fn shed_conv_with(&self, t: usize, inf: &[u64]) -> f64 {
        self.shed
            .iter()
            .map(|&(d, w)| w * inf[t.saturating_sub(d)] as f64)
            .sum()
    }

    #[inline]
    fn obs_sd(&self, t: usize) -> f64 {
        match &self.data.known_sd {
            Some(sd) => sd[t],
            None => self.sigma_y,
        }
    }

    /// Observation log-density at week `t` without the terms that only
    /// depend on `y_t` and `sigma`.
    #[inline]
    fn obs_term(&self, t: usize, ln_beta: f64, ln_shed: f64, sigma: f64) -> f64 {
        let u = (self.data.ln_y[t] - ln_beta - ln_shed + 0.5 * sigma * sigma) / sigma;
        -0.5 * u * u
    }

    fn freeze(&mut self) {
        self.k_ad.freeze();
        self.k_fixed_r_ad.freeze();
        self.sigma_eps_ad.freeze();
        self.beta_ad.freeze();
        self.sigma_y_ad.freeze();
        self.z_ad.iter_mut().for_each(Adapter::freeze);
        self.inf_ad.iter_mut().for_each(Adapter::freeze);
        self.level_ad.freeze();
    }

    fn acceptance(&self) -> AcceptanceRecord {
        let mean = |a: &[Adapter]| {
            let rates: Vec<f64> = a
                .iter()
                .map(Adapter::acceptance_rate)
                .filter(|r| r.is_finite())
                .collect();
            if rates.is_empty() {
                f64::NAN
            } else {
                rates.iter().sum::<f64>() / rates.len() as f64
            }
        };
        AcceptanceRecord {
            k: self.k_ad.acceptance_rate(),
            sigma_eps: self.sigma_eps_ad.acceptance_rate(),
            beta: self.beta_ad.acceptance_rate(),
            sigma_y: self.sigma_y_ad.acceptance_rate(),
            z_mean: mean(&self.z_ad),
            infections_mean: mean(&self.inf_ad),
            level: self.level_ad.acceptance_rate(),
        }
    }

    fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R, iter: usize) {
        if self.blocks.k {
            self.update_k(rng, iter);
            if self.blocks.z {
                self.update_k_at_fixed_r(rng, iter);
            }
        }
        if self.blocks.sigma_eps {
            self.update_sigma_eps(rng, iter);
        }
        if self.blocks.beta {
            self.update_beta(rng, iter);
        }
        if self.blocks.sigma_y && self.data.known_sd.is_none() {
            self.update_sigma_y(rng, iter);
        }
        if self.blocks.z {
            for t in 0..self.n {
                self.update_z(rng, iter, t);
            }
        }
        if self.blocks.infections {
            for t in 0..self.n {
                self.update_infection(rng, iter, t);
            }
        }
        if self.blocks.level {
            for _ in 0..LEVEL_REPEATS {
                self.update_level(rng, iter);
                if self.blocks.beta {
                    self.update_beta(rng, iter);
                }
            }
        }
    }

    /// Poisson terms of weeks `1..n` under reproduction numbers in
    /// `scratch.r`, filling `scratch.lam` / `scratch.ln_lam`.
    fn poisson_delta_for_scratch_r(&mut self) -> f64 {
        let mut delta = 0.0;
        for t in 1..self.n {
            let (lam, ln_lam) = floored_mean(self.scratch.r[t], self.gen_conv[t]);
            delta += poisson_core(self.inf[t], lam, ln_lam)
                - poisson_core(self.inf[t], self.lam[t], self.ln_lam[t]);
            self.scratch.lam[t] = lam;
            self.scratch.ln_lam[t] = ln_lam;
        }
        delta
    }

    fn adopt_scratch_r(&mut self) {
        std::mem::swap(&mut self.r, &mut self.scratch.r);
        // week 0 keeps the anchor mean
        self.scratch.lam[0] = self.lam[0];
        self.scratch.ln_lam[0] = self.ln_lam[0];
        std::mem::swap(&mut self.lam, &mut self.scratch.lam);
        std::mem::swap(&mut self.ln_lam, &mut self.scratch.ln_lam);
    }

    fn update_k<R: Rng + ?Sized>(&mut self, rng: &mut R, iter: usize) {
        let ln_k = self.k.ln();
        let ln_k_new = ln_k + self.k_ad.scale() * rng.sample::<f64, _>(StandardNormal);
        let k_new = ln_k_new.exp();
        let priors = &self.config.priors;
        let mut delta = priors.ln_prior_k(k_new) - priors.ln_prior_k(self.k) + (ln_k_new - ln_k);
        if delta.is_finite() {
            for t in 0..self.n {
                self.scratch.r[t] = softplus_link(self.z[t], k_new);
            }
            delta += self.poisson_delta_for_scratch_r();
        }
        let accept = accept(rng, delta);
        if accept {
            self.k = k_new;
            self.adopt_scratch_r();
        }
        self.k_ad.adapt(accept, iter);
    }

    /// Joint move of `k` and every `z_t` that keeps each `R_t` in place.
    fn update_k_at_fixed_r<R: Rng + ?Sized>(&mut self, rng: &mut R, iter: usize) {
        let ln_k = self.k.ln();
        let ln_k_new = ln_k + self.k_fixed_r_ad.scale() * rng.sample::<f64, _>(StandardNormal);
        let k_new = ln_k_new.exp();
        let priors = &self.config.priors;
        let mut delta = priors.ln_prior_k(k_new) - priors.ln_prior_k(self.k) + (ln_k_new - ln_k);
        if delta.is_finite() {
            for t in 0..self.n {
                let z = inverse_softplus(self.r[t], k_new);
                self.scratch.z[t] = z;
                self.scratch.r[t] = softplus_link(z, k_new);
            }
            if self.scratch.z.iter().any(|z| !z.is_finite()) {
                delta = f64::NEG_INFINITY;
            } else {
                // dz'/dz = sigmoid(k z) / sigmoid(k' z')
                let ln_sigmoid = |x: f64| -(-x).exp().ln_1p();
                let zs = &self.scratch.z;
                delta += self.walk_delta(0, self.z[0], zs[0]) + self.walk_prefix_delta(zs);
                for t in 0..self.n {
                    delta += ln_sigmoid(self.k * self.z[t]) - ln_sigmoid(k_new * zs[t]);
                }
                delta += self.poisson_delta_for_scratch_r();
            }
        }
        let accept = accept(rng, delta);
        if accept {
            self.k = k_new;
            std::mem::swap(&mut self.z, &mut self.scratch.z);
            self.adopt_scratch_r();
        }
        self.k_fixed_r_ad.adapt(accept, iter);
    }

    /// Change in all random-walk increments when the path becomes `z_new`.
    fn walk_prefix_delta(&self, z_new: &[f64]) -> f64 {
        let ss_old: f64 = self.z.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        let ss_new: f64 = z_new.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        -(ss_new - ss_old) / (2.0 * self.sigma_eps.powi(2))
    }

    fn update_sigma_eps<R: Rng + ?Sized>(&mut self, rng: &mut R, iter: usize) {
        let ln_s = self.sigma_eps.ln();
        let ln_s_new = ln_s + self.sigma_eps_ad.scale() * rng.sample::<f64, _>(StandardNormal);
        let s_new = ln_s_new.exp();
        let priors = &self.config.priors;
        let ss: f64 = self.z.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        let m = (self.n - 1) as f64;
        let walk = |s: f64| -m * s.ln() - 0.5 * ss / (s * s);
        let delta = walk(s_new) - walk(self.sigma_eps)
            + priors.ln_prior_sigma_eps(s_new)
            - priors.ln_prior_sigma_eps(self.sigma_eps)
            + (ln_s_new - ln_s);
        let accept = accept(rng, delta);
        if accept {
            self.sigma_eps = s_new;
        }
        self.sigma_eps_ad.adapt(accept, iter);
    }

    fn update_beta<R: Rng + ?Sized>(&mut self, rng: &mut R, iter: usize) {
        let ln_b = self.beta.ln();
        let ln_b_new = ln_b + self.beta_ad.scale() * rng.sample::<f64, _>(StandardNormal);
        let priors = &self.config.priors;
        let mut delta = priors.ln_prior_beta(ln_b_new.exp()) - priors.ln_prior_beta(self.beta)
            + (ln_b_new - ln_b);
        for &t in &self.data.present_idx {
            let sd = self.obs_sd(t);
            delta += self.obs_term(t, ln_b_new, self.ln_shed[t], sd)
                - self.obs_term(t, ln_b, self.ln_shed[t], sd);
        }
        let accept = accept(rng, delta);
        if accept {
            self.beta = ln_b_new.exp();
        }
        self.beta_ad.adapt(accept, iter);
    }

    fn update_sigma_y<R: Rng + ?Sized>(&mut self, rng: &mut R, iter: usize) {
        let ln_s = self.sigma_y.ln();
        let ln_s_new = ln_s + self.sigma_y_ad.scale() * rng.sample::<f64, _>(StandardNormal);
        let s_new = ln_s_new.exp();
        let priors = &self.config.priors;
        let n_obs = self.data.present_idx.len() as f64;
        let mut delta = priors.ln_prior_sigma_y(s_new) - priors.ln_prior_sigma_y(self.sigma_y)
            + (ln_s_new - ln_s)
            - n_obs * (ln_s_new - ln_s);
        if delta.is_finite() {
            let ln_b = self.beta.ln();
            for &t in &self.data.present_idx {
                delta += self.obs_term(t, ln_b, self.ln_shed[t], s_new)
                    - self.obs_term(t, ln_b, self.ln_shed[t], self.sigma_y);
            }
        }
        let accept = accept(rng, delta);
        if accept {
            self.sigma_y = s_new;
        }
        self.sigma_y_ad.adapt(accept, iter);
    }

    /// Change in the term linking `z_t` to its predecessor (or the prior of
    /// the first week).
    #[inline]
    fn walk_delta(&self, t: usize, z_old: f64, z_new: f64) -> f64 {
        let sq = |a: f64, b: f64| (a - b) * (a - b);
        if t == 0 {
            let p = &self.config.priors;
            -(sq(z_new, p.z1_mean) - sq(z_old, p.z1_mean)) / (2.0 * p.z1_sd * p.z1_sd)
        } else {
            -(sq(z_new, self.z[t - 1]) - sq(z_old, self.z[t - 1])) / (2.0 * self.sigma_eps.powi(2))
        }
    }

    /// Change in the term linking `z_{t+1}` to `z_t`.
    #[inline]
    fn walk_next_delta(&self, t: usize, z_old: f64, z_new: f64) -> f64 {
        if t + 1 >= self.n {
            return 0.0;
        }
        let sq = |a: f64, b: f64| (a - b) * (a - b);
        -(sq(self.z[t + 1], z_new) - sq(self.z[t + 1], z_old)) / (2.0 * self.sigma_eps.powi(2))
    }

    fn update_z<R: Rng + ?Sized>(&mut self, rng: &mut R, iter: usize, t: usize) {
        let z_old = self.z[t];
        let z_new = z_old + self.z_ad[t].scale() * rng.sample::<f64, _>(StandardNormal);
        let mut delta = self.walk_delta(t, z_old, z_new) + self.walk_next_delta(t, z_old, z_new);
        let r_new = softplus_link(z_new, self.k);
        let (mut lam, mut ln_lam) = (self.lam[t], self.ln_lam[t]);
        if t > 0 {
            (lam, ln_lam) = floored_mean(r_new, self.gen_conv[t]);
            delta += poisson_core(self.inf[t], lam, ln_lam)
                - poisson_core(self.inf[t], self.lam[t], self.ln_lam[t]);
        }
        let accept = accept(rng, delta);
        if accept {
            self.z[t] = z_new;
            self.r[t] = r_new;
            self.lam[t] = lam;
            self.ln_lam[t] = ln_lam;
        }
        self.z_ad[t].adapt(accept, iter);
    }

    fn update_infection<R: Rng + ?Sized>(&mut self, rng: &mut R, iter: usize, t: usize) {
        let old = self.inf[t];
        let u: f64 = rng.random_range(-1.0..1.0);
        let mut step = (self.inf_ad[t].scale() * u).round() as i64;
        if step == 0 {
            step = if u < 0.0 { -1 } else { 1 };
        }
        let proposed = old as i64 + step;
        if proposed < 0 || proposed as u64 > self.cap {
            self.inf_ad[t].adapt(false, iter);
            return;
        }
        let new = proposed as u64;

        let ln_fact_new = ln_factorial(new);
        let mut delta =
            (new as f64 - old as f64) * self.ln_lam[t] + self.ln_fact[t] - ln_fact_new;

        self.inf[t] = new;
        let gen_hi = (t + self.max_gen).min(self.n - 1);
        let shed_hi = (t + self.max_shed).min(self.n - 1);
        let mut sc = std::mem::take(&mut self.scratch);
        for s in (t + 1)..=gen_hi {
            let conv = self.gen_conv_with(s, &self.inf);
            let (lam, ln_lam) = floored_mean(self.r[s], conv);
            delta += poisson_core(self.inf[s], lam, ln_lam)
                - poisson_core(self.inf[s], self.lam[s], self.ln_lam[s]);
            sc.gen_conv[s] = conv;
            sc.lam[s] = lam;
            sc.ln_lam[s] = ln_lam;
        }
        let ln_b = self.beta.ln();
        for s in t..=shed_hi {
            let ln_conv = self.shed_conv_with(s, &self.inf).max(LOAD_FLOOR).ln();
            if self.data.present[s] {
                let sd = self.obs_sd(s);
                delta += self.obs_term(s, ln_b, ln_conv, sd)
                    - self.obs_term(s, ln_b, self.ln_shed[s], sd);
            }
            sc.ln_shed[s] = ln_conv;
        }

        let accept = accept(rng, delta);
        if accept {
            self.ln_fact[t] = ln_fact_new;
            for s in (t + 1)..=gen_hi {
                self.gen_conv[s] = sc.gen_conv[s];
                self.lam[s] = sc.lam[s];
                self.ln_lam[s] = sc.ln_lam[s];
            }
            self.ln_shed[t..=shed_hi].copy_from_slice(&sc.ln_shed[t..=shed_hi]);
        } else {
            self.inf[t] = old;
        }
        self.scratch = sc;
        self.inf_ad[t].adapt(accept, iter);
    }

    /// Moves the infection level by a factor `c` and `beta` by `1/c`.
    ///
    /// `I_0` is scaled by `c`. Each later week keeps its standardized
    /// Poisson residual: the target is `lam' + sqrt(lam' / lam) (I_t - lam)`
    /// with `lam'` recomputed from the already-moved history. Targets are
    /// rounded up or down at random with probability given by the fractional
    /// part, and the reverse rounding probabilities enter the acceptance ratio.
    fn update_level<R: Rng + ?Sized>(&mut self, rng: &mut R, iter: usize) {
        let ln_c = self.level_ad.scale() * rng.sample::<f64, _>(StandardNormal);
        let c = ln_c.exp();
        let mut sc = std::mem::take(&mut self.scratch);

        // forward and reverse rounding probabilities, folded into logs
        // only when the running products get small
        let (mut fwd, mut back, mut ln_ratio) = (1.0f64, 1.0f64, 0.0f64);
        let mut feasible = true;
        for t in 0..self.n {
            let old = self.inf[t];
            let (x, reverse) = if t == 0 {
                (c * old as f64, None)
            } else {
                sc.gen_conv[t] = self.gen_conv_with(t, &sc.inf);
                (sc.lam[t], sc.ln_lam[t]) = floored_mean(self.r[t], sc.gen_conv[t]);
                let stretch = (sc.lam[t] / self.lam[t]).sqrt();
                let x = sc.lam[t] + stretch * (old as f64 - self.lam[t]);
                (x, Some(stretch))
            };
            if !(x >= 0.0) {
                feasible = false;
                break;
            }
            let floor = x.floor();
            let frac = x - floor;
            let up = rng.random::<f64>() < frac;
            let j = floor as u64 + up as u64;
            let x_back = match reverse {
                None => j as f64 / c,
                Some(stretch) => self.lam[t] + (j as f64 - sc.lam[t]) / stretch,
            };
            fwd *= if up { frac } else { 1.0 - frac };
            back *= if x_back >= 0.0 { rounding_probability(x_back, old) } else { 0.0 };
            if back == 0.0 || j > self.cap {
                feasible = false;
                break;
            }
            if fwd < 1e-200 || back < 1e-200 {
                ln_ratio += back.ln() - fwd.ln();
                fwd = 1.0;
                back = 1.0;
            }
            sc.inf[t] = j;
        }
        if !feasible {
            self.scratch = sc;
            self.level_ad.adapt(false, iter);
            return;
        }
        ln_ratio += back.ln() - fwd.ln();

        let beta_new = self.beta / c;
        let priors = &self.config.priors;
        let mut delta = ln_ratio + priors.ln_prior_beta(beta_new)
            - priors.ln_prior_beta(self.beta)
            - ln_c;
        for t in 0..self.n {
            let (old_i, new_i) = (self.inf[t], sc.inf[t]);
            sc.ln_fact[t] = if new_i == old_i { self.ln_fact[t] } else { ln_factorial(new_i) };
            delta += self.ln_fact[t] - sc.ln_fact[t];
            if t == 0 {
                sc.lam[0] = self.lam[0];
                sc.ln_lam[0] = self.ln_lam[0];
            }
            delta += poisson_core(new_i, sc.lam[t], sc.ln_lam[t])
                - poisson_core(old_i, self.lam[t], self.ln_lam[t]);
            sc.ln_shed[t] = self.shed_conv_with(t, &sc.inf).max(LOAD_FLOOR).ln();
        }
        let (ln_b, ln_b_new) = (self.beta.ln(), beta_new.ln());
        for &t in &self.data.present_idx {
            let sd = self.obs_sd(t);
            delta += self.obs_term(t, ln_b_new, sc.ln_shed[t], sd)
                - self.obs_term(t, ln_b, self.ln_shed[t], sd);
        }
        let accept = accept(rng, delta);
        if accept {
            self.beta = beta_new;
            std::mem::swap(&mut self.inf, &mut sc.inf);
            std::mem::swap(&mut self.gen_conv, &mut sc.gen_conv);
            std::mem::swap(&mut self.lam, &mut sc.lam);
            std::mem::swap(&mut self.ln_lam, &mut sc.ln_lam);
            std::mem::swap(&mut self.ln_shed, &mut sc.ln_shed);
            std::mem::swap(&mut self.ln_fact, &mut sc.ln_fact);
        }
        self.scratch = sc;
        self.level_ad.adapt(accept, iter);
    }
}

/// Probability that stochastic rounding of `x` lands on `target`.
fn rounding_probability(x: f64, target: u64) -> f64 {
    let floor = x.floor();
    let frac = x - floor;
    let t = target as f64;
    if t == floor {
        1.0 - frac
    } else if t == floor + 1.0 {
        frac
    } else {
        0.0
    }
}

#[inline]
fn accept<R: Rng + ?Sized>(rng: &mut R, delta: f64) -> bool {
    if delta >= 0.0 {
        return true;
    }
    if !delta.is_finite() {
        return false;
    }
    rng.random::<f64>().ln() < delta
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adapter_grows_under_full_acceptance() {
        let mut a = Adapter::new(1.0, 0.44);
        let mut prev = a.scale();
        for i in 0..200 {
            a.adapt(true, i);
            assert!(a.scale() > prev);
            prev = a.scale();
        }
    }

    #[test]
    fn adapter_shrinks_under_zero_acceptance() {
        let mut a = Adapter::new(1.0, 0.44);
        let mut prev = a.scale();
        for i in 0..200 {
            a.adapt(false, i);
            assert!(a.scale() < prev);
            prev = a.scale();
        }
    }

    #[test]
    fn frozen_adapter_keeps_scale() {
        let mut a = Adapter::new(0.3, 0.44);
        a.adapt(true, 0);
        a.freeze();
        let s = a.scale();
        let mut adapters = [a; 3];
        for i in 0..100 {
            adapt_step_sizes(&mut adapters, &[i % 2 == 0, true, false], i);
        }
        assert!(adapters.iter().all(|a| a.scale() == s));
        assert_eq!(adapters[1].acceptance_rate(), 1.0);
    }

    #[test]
    fn rounding_probability_cases() {
        assert_eq!(rounding_probability(3.0, 3), 1.0);
        assert!((rounding_probability(3.25, 3) - 0.75).abs() < 1e-15);
        assert!((rounding_probability(3.25, 4) - 0.25).abs() < 1e-15);
        assert_eq!(rounding_probability(3.25, 5), 0.0);
    }

    #[test]
    fn interpolation_fills_gaps_in_log_space() {
        let v = [None, Some(1.0), None, Some(100.0), None];
        let s = interpolated_log_shape(&v).unwrap();
        assert_eq!(s[0], 0.0);
        assert!((s[2] - 0.5 * 100f64.ln()).abs() < 1e-12);
        assert_eq!(s[4], 100f64.ln());
        assert!(interpolated_log_shape(&[None, None]).is_none());
    }

    #[test]
    fn settings_validation() {
        let ok = McmcSettings::default();
        assert!(ok.validate().is_ok());
        assert_eq!(ok.retained_per_chain(), 3000);
        assert!(McmcSettings { n_chains: 1, ..ok }.validate().is_err());
        assert!(McmcSettings { n_warmup: 60_000, ..ok }.validate().is_err());
        assert!(McmcSettings { thin: 0, ..ok }.validate().is_err());
    }
}
