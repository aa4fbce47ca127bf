//! TOML run and scenario configuration.
//!
//! Every table and key is optional; omitted values take the defaults below.
//! Unknown keys are rejected.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use wwrt_core::kernels::{
    gamma_from_moments, generation_kernel, generation_kernel_by_mass, shedding_kernel,
    shedding_kernel_by_mass, KernelWeights, DEFAULT_TRUNCATION_MASS,
};
use wwrt_core::mcmc::McmcSettings;
use wwrt_core::model::{Mode, ModelConfig, PriorSpec, ScalarParams};
use wwrt_core::simulate::{single_wave_rt_path, standard_rt_path, RtPath, Scenario};
use wwrt_core::ssm::QuasiNewtonSettings;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub generation_mean_days: f64,
    pub generation_sd_days: f64,
    pub shedding_mean_days: f64,
    pub shedding_sd_days: f64,
    pub truncation_mass: f64,
    /// Overrides the mass-based truncation when set.
    pub generation_max_lag: Option<usize>,
    pub shedding_max_lag: Option<usize>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            generation_mean_days: 7.5,
            generation_sd_days: 2.1,
            shedding_mean_days: 4.6,
            shedding_sd_days: 2.0,
            truncation_mass: DEFAULT_TRUNCATION_MASS,
            generation_max_lag: None,
            shedding_max_lag: None,
        }
    }
}

impl KernelConfig {
    pub fn build(&self) -> Result<(KernelWeights, KernelWeights)> {
        let g = gamma_from_moments(self.generation_mean_days, self.generation_sd_days)?;
        let s = gamma_from_moments(self.shedding_mean_days, self.shedding_sd_days)?;
        let gen = match self.generation_max_lag {
            Some(lag) => generation_kernel(&g, lag)?,
            None => generation_kernel_by_mass(&g, self.truncation_mass)?,
        };
        let shed = match self.shedding_max_lag {
            Some(lag) => shedding_kernel(&s, lag)?,
            None => shedding_kernel_by_mass(&s, self.truncation_mass)?,
        };
        Ok((gen, shed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub anchor_mean: f64,
    pub kernels: KernelConfig,
    pub priors: PriorSpec,
    pub mcmc: McmcSettings,
    pub filter: QuasiNewtonSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            anchor_mean: 61.0,
            kernels: KernelConfig::default(),
            priors: PriorSpec::default(),
            mcmc: McmcSettings::default(),
            filter: QuasiNewtonSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => parse_toml(p),
            None => Ok(Self::default()),
        }
    }

    pub fn model_config(&self, mode: Mode) -> Result<ModelConfig> {
        let (gen, shed) = self.kernels.build()?;
        Ok(ModelConfig::new(gen, shed, self.anchor_mean, mode, self.priors)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueParams {
    pub k: f64,
    pub sigma_eps: f64,
    pub beta: f64,
    pub sigma_y: f64,
}

impl Default for TrueParams {
    fn default() -> Self {
        Self {
            k: 8.0,
            sigma_eps: 0.075,
            beta: 14.0,
            sigma_y: 0.39,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RtPathConfig {
    /// The standard two-wave path.
    TwoWave,
    /// One wave starting at `start` (1-based week).
    SingleWave {
        start: usize,
        half_period: usize,
        amplitude: f64,
    },
    RandomWalk { z1: f64 },
    Prescribed { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub weeks: usize,
    pub start_date: NaiveDate,
    pub seed: u64,
    pub anchor_mean: f64,
    /// 1-based week numbers.
    pub missing_weeks: Vec<usize>,
    pub params: TrueParams,
    pub rt_path: RtPathConfig,
    pub kernels: KernelConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            weeks: 104,
            start_date: NaiveDate::from_ymd_opt(2023, 1, 16).unwrap(),
            seed: 1,
            anchor_mean: 61.0,
            missing_weeks: vec![13, 14, 48, 72, 91],
            params: TrueParams::default(),
            rt_path: RtPathConfig::TwoWave,
            kernels: KernelConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => parse_toml(p),
            None => Ok(Self::default()),
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let mut missing = BTreeSet::new();
        for &w in &self.missing_weeks {
            if w == 0 || w > self.weeks {
                return Err(CliError::Schema(format!(
                    "missing week {w} outside 1..={}",
                    self.weeks
                )));
            }
            missing.insert(w - 1);
        }
        let rt_path = match &self.rt_path {
            RtPathConfig::TwoWave => RtPath::Prescribed(standard_rt_path(self.weeks)),
            RtPathConfig::SingleWave {
                start,
                half_period,
                amplitude,
            } => {
                if *start == 0 || *half_period == 0 {
                    return Err(CliError::Schema(
                        "single wave needs start >= 1 and half_period >= 1".into(),
                    ));
                }
                RtPath::Prescribed(single_wave_rt_path(self.weeks, start - 1, *half_period, *amplitude))
            }
            RtPathConfig::RandomWalk { z1 } => RtPath::RandomWalk { z1: *z1 },
            RtPathConfig::Prescribed { values } => RtPath::Prescribed(values.clone()),
        };
        let scenario = Scenario {
            weeks: self.weeks,
            start_date: self.start_date,
            true_params: ScalarParams {
                k: self.params.k,
                sigma_eps: self.params.sigma_eps,
                beta: self.params.beta,
                sigma_y: Some(self.params.sigma_y),
            },
            rt_path,
            anchor_mean: self.anchor_mean,
            missing_weeks: missing,
            seed: self.seed,
        };
        scenario.validate().map_err(|e| CliError::Schema(e.to_string()))?;
        Ok(scenario)
    }
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use wwrt_core::simulate::standard_scenario;

    #[test]
    fn empty_scenario_is_the_standard_one() {
        let cfg: ScenarioConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.scenario().unwrap(), standard_scenario(1));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("anchor = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[mcmc]\nchains = 2").is_err());
        assert!(toml::from_str::<ScenarioConfig>("[rt_path]\nkind = \"wobble\"").is_err());
    }

    #[test]
    fn partial_tables_keep_defaults() {
        let cfg: RunConfig = toml::from_str("[priors]\nz1_sd = 0.7\n[mcmc]\nn_chains = 2").unwrap();
        assert_eq!(cfg.priors.z1_sd, 0.7);
        assert_eq!(cfg.priors.k_upper, 50.0);
        assert_eq!(cfg.mcmc.n_chains, 2);
        assert_eq!(cfg.mcmc.n_iter, 60_000);
    }

    #[test]
    fn rsv_defaults_give_short_kernels() {
        let (g, s) = KernelConfig::default().build().unwrap();
        assert_eq!(g.min_lag(), 1);
        assert_eq!(s.min_lag(), 0);
        assert!(g.max_lag() >= 1 && s.max_lag() >= 1);
    }

    #[test]
    fn missing_week_zero_is_schema_error() {
        let cfg = ScenarioConfig {
            missing_weeks: vec![0],
            ..Default::default()
        };
        assert!(matches!(cfg.scenario(), Err(CliError::Schema(_))));
    }
}
