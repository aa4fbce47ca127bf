//! Forward simulation of weekly epidemics and viral loads from the renewal
//! model, with ground truth returned next to the data.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::Write;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelWeights;
use crate::model::{
    expected_load, generation_convolution, softplus_link, LatentState, ScalarParams, LAMBDA_FLOOR,
};
use crate::series::{Unit, WeeklySeries};

/// Largest Poisson mean the sampler accepts; renewal means are capped here.
const POISSON_MAX: f64 = 1e15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RtPath {
    /// `z_0 = z1`, then `z_t = z_{t-1} + sigma_eps * N(0, 1)`.
    RandomWalk { z1: f64 },
    /// Fixed reproduction numbers, one per week.
    Prescribed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub weeks: usize,
    pub start_date: NaiveDate,
    pub true_params: ScalarParams,
    pub rt_path: RtPath,
    pub anchor_mean: f64,
    /// 0-based week indices to blank out.
    pub missing_weeks: BTreeSet<usize>,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.weeks == 0 {
            return Err(Error::TooShort("scenario needs at least one week".into()));
        }
        if !(self.anchor_mean > 0.0 && self.anchor_mean.is_finite()) {
            return Err(Error::InvalidParameter("anchor_mean must be positive".into()));
        }
        let p = &self.true_params;
        if !(p.k > 0.0 && p.sigma_eps > 0.0 && p.beta > 0.0) {
            return Err(Error::InvalidParameter("k, sigma_eps and beta must be positive".into()));
        }
        if !p.sigma_y.is_some_and(|s| s > 0.0) {
            return Err(Error::InvalidParameter("scenario needs a positive sigma_y".into()));
        }
        if let RtPath::Prescribed(r) = &self.rt_path {
            if r.len() != self.weeks {
                return Err(Error::Dimension(format!(
                    "prescribed R path has {} weeks, scenario has {}",
                    r.len(),
                    self.weeks
                )));
            }
            if r.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidParameter("prescribed R must be positive".into()));
            }
        }
        if let Some(&w) = self.missing_weeks.iter().next_back() {
            if w >= self.weeks {
                return Err(Error::Dimension(format!("missing week {w} outside the series")));
            }
        }
        Ok(())
    }
}

/// Two years of weeks with two waves: a larger one peaking around week 36
/// and a smaller one around week 85, with R = 1 elsewhere.
pub fn standard_rt_path(weeks: usize) -> Vec<f64> {
    (0..weeks)
        .map(|t| {
            let t = t as f64;
            let log_r = if (30.0..=56.0).contains(&t) {
                0.2 * (2.0 * PI * (t - 30.0) / 26.0).sin()
            } else if (80.0..=100.0).contains(&t) {
                0.12 * (2.0 * PI * (t - 80.0) / 20.0).sin()
            } else {
                0.0
            };
            log_r.exp()
        })
        .collect()
}

pub fn standard_scenario(seed: u64) -> Scenario {
    Scenario {
        weeks: 104,
        start_date: NaiveDate::from_ymd_opt(2023, 1, 16).unwrap(),
        true_params: ScalarParams {
            k: 8.0,
            sigma_eps: 0.075,
            beta: 14.0,
            sigma_y: Some(0.39),
        },
        rt_path: RtPath::Prescribed(standard_rt_path(104)),
        anchor_mean: 61.0,
        missing_weeks: [12, 13, 47, 71, 90].into_iter().collect(),
        seed,
    }
}

/// Single wave: `log R` follows `amplitude * sin(pi x)` for
/// `x = (t - start) / half_period` up to `x = 3/2`, then stays at `-amplitude`.
/// The path rises then falls, so it has one peak.
pub fn single_wave_rt_path(weeks: usize, start: usize, half_period: usize, amplitude: f64) -> Vec<f64> {
    (0..weeks)
        .map(|t| {
            if t < start {
                return 1.0;
            }
            let x = ((t - start) as f64 / half_period as f64).min(1.5);
            (amplitude * (PI * x).sin()).exp()
        })
        .collect()
}

/// `z` with `softplus_link(z, k) = r`.
pub fn inverse_softplus(r: f64, k: f64) -> f64 {
    let kr = k * r;
    if kr > 30.0 {
        r + (-(-kr).exp()).ln_1p() / k
    } else {
        kr.exp_m1().ln() / k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub data: WeeklySeries,
    pub latent: LatentState,
    pub reproduction: Vec<f64>,
    pub expected_load: Vec<f64>,
}

impl Simulation {
    /// Truth table with 1-based week numbers.
    pub fn write_truth_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["week", "R_true", "I_true", "pi_true"])?;
        for t in 0..self.reproduction.len() {
            w.write_record([
                (t + 1).to_string(),
                self.reproduction[t].to_string(),
                self.latent.infections[t].to_string(),
                self.expected_load[t].to_string(),
            ])?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<truth>".into(),
            source,
        })?;
        Ok(())
    }
}

pub fn simulate(
    scenario: &Scenario,
    gen_kernel: &KernelWeights,
    shed_kernel: &KernelWeights,
) -> Result<Simulation> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let p = scenario.true_params;
    let n = scenario.weeks;

    let (z, reproduction): (Vec<f64>, Vec<f64>) = match &scenario.rt_path {
        RtPath::RandomWalk { z1 } => {
            let mut z = Vec::with_capacity(n);
            z.push(*z1);
            for t in 1..n {
                z.push(z[t - 1] + p.sigma_eps * rng.sample::<f64, _>(StandardNormal));
            }
            let r = z.iter().map(|&zt| softplus_link(zt, p.k)).collect();
            (z, r)
        }
        RtPath::Prescribed(r) => (r.iter().map(|&rt| inverse_softplus(rt, p.k)).collect(), r.clone()),
    };

    let mut infections = Vec::with_capacity(n);
    infections.push(poisson_draw(scenario.anchor_mean, &mut rng));
    for t in 1..n {
        let lambda = (reproduction[t] * generation_convolution(&infections, gen_kernel, t))
            .max(LAMBDA_FLOOR);
        infections.push(poisson_draw(lambda, &mut rng));
    }

    let sigma_y = p.sigma_y.expect("validated");
    let noise = Normal::new(-0.5 * sigma_y * sigma_y, sigma_y)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut pi = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for t in 0..n {
        let load = expected_load(&infections, shed_kernel, p.beta, t);
        let y = load * noise.sample(&mut rng).exp();
        pi.push(load);
        values.push((!scenario.missing_weeks.contains(&t)).then_some(y));
    }
    let data = WeeklySeries::new(scenario.start_date, values, Unit::BGcPerDay)?;
    Ok(Simulation {
        data,
        latent: LatentState { z, infections },
        reproduction,
        expected_load: pi,
    })
}

fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    let mean = mean.min(POISSON_MAX);
    Poisson::new(mean).expect("positive finite mean").sample(rng) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PhaseCheck {
    pub rt_peak_week: usize,
    pub it_peak_week: usize,
    pub load_peak_week: usize,
    /// R path has a single peak, so the ordering is meaningful.
    pub assessable: bool,
    /// `rt_peak <= it_peak <= load_peak`.
    pub ordered: bool,
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Whether `values` rises (weakly) to a single plateau and then falls
/// (weakly), with at least one strict change.
pub fn is_unimodal(values: &[f64]) -> bool {
    let mut falling = false;
    let mut changed = false;
    for w in values.windows(2) {
        if w[1] > w[0] {
            if falling {
                return false;
            }
            changed = true;
        } else if w[1] < w[0] {
            falling = true;
            changed = true;
        }
    }
    changed
}

/// Peak weeks of R, infections and load; ordering is only judged when `r`
/// is unimodal.
pub fn peak_ordering(r: &[f64], infections: &[f64], load: &[f64]) -> PhaseCheck {
    let (a, b, c) = (argmax(r), argmax(infections), argmax(load));
    PhaseCheck {
        rt_peak_week: a,
        it_peak_week: b,
        load_peak_week: c,
        assessable: is_unimodal(r),
        ordered: a <= b && b <= c,
    }
}

pub fn epidemic_phase_check(truth: &Simulation) -> PhaseCheck {
    let inf: Vec<f64> = truth.latent.infections.iter().map(|&i| i as f64).collect();
    peak_ordering(&truth.reproduction, &inf, &truth.expected_load)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gamma_from_moments, generation_kernel_by_mass, shedding_kernel_by_mass,
                         KernelKind, DEFAULT_TRUNCATION_MASS};

    fn rsv_kernels() -> (KernelWeights, KernelWeights) {
        let g = gamma_from_moments(7.5, 2.1).unwrap();
        let s = gamma_from_moments(4.6, 2.0).unwrap();
        (
            generation_kernel_by_mass(&g, DEFAULT_TRUNCATION_MASS).unwrap(),
            shedding_kernel_by_mass(&s, DEFAULT_TRUNCATION_MASS).unwrap(),
        )
    }

    #[test]
    fn inverse_softplus_round_trips() {
        for &k in &[0.5, 8.0, 50.0] {
            for &r in &[1e-3, 0.5, 1.0, 1.3, 4.0, 40.0] {
                let z = inverse_softplus(r, k);
                approx::assert_relative_eq!(softplus_link(z, k), r, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn standard_scenario_is_valid_and_deterministic() {
        let (g, s) = rsv_kernels();
        let sc = standard_scenario(3);
        let a = simulate(&sc, &g, &s).unwrap();
        let b = simulate(&sc, &g, &s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.data.len(), 104);
        assert_eq!(a.data.missing_weeks(), vec![12, 13, 47, 71, 90]);
        assert!(a.latent.infections.iter().all(|&i| i > 0));
        let c = simulate(&standard_scenario(4), &g, &s).unwrap();
        assert_ne!(a.latent.infections, c.latent.infections);
    }

    #[test]
    fn all_missing_keeps_truth() {
        let (g, s) = rsv_kernels();
        let mut sc = standard_scenario(1);
        sc.missing_weeks = (0..sc.weeks).collect();
        let out = simulate(&sc, &g, &s).unwrap();
        assert_eq!(out.data.n_present(), 0);
        assert_eq!(out.latent.infections.len(), 104);
    }

    #[test]
    fn rejects_wrong_path_length() {
        let (g, s) = rsv_kernels();
        let mut sc = standard_scenario(1);
        sc.rt_path = RtPath::Prescribed(vec![1.0; 10]);
        assert!(matches!(simulate(&sc, &g, &s), Err(Error::Dimension(_))));
    }

    #[test]
    fn renewal_ratio_with_point_mass_kernels() {
        let g = KernelWeights::from_weights(KernelKind::Generation, vec![1.0]).unwrap();
        let s = KernelWeights::from_weights(KernelKind::Shedding, vec![1.0]).unwrap();
        let reps = 1000;
        let mut ratios = Vec::with_capacity(reps);
        for seed in 0..reps as u64 {
            let sc = Scenario {
                weeks: 2,
                start_date: NaiveDate::from_ymd_opt(2023, 1, 2).unwrap(),
                true_params: ScalarParams {
                    k: 8.0,
                    sigma_eps: 0.1,
                    beta: 1.0,
                    sigma_y: Some(0.1),
                },
                rt_path: RtPath::Prescribed(vec![0.5, 0.5]),
                anchor_mean: 400.0,
                missing_weeks: BTreeSet::new(),
                seed,
            };
            let out = simulate(&sc, &g, &s).unwrap();
            let i = &out.latent.infections;
            ratios.push(i[1] as f64 / i[0] as f64);
        }
        let mean = ratios.iter().sum::<f64>() / reps as f64;
        let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn mean_correction_keeps_loads_unbiased() {
        let (g, s) = rsv_kernels();
        let mut sum = 0.0;
        let mut count = 0usize;
        for seed in 0..100 {
            let mut sc = standard_scenario(seed);
            sc.true_params.sigma_y = Some(0.01);
            let out = simulate(&sc, &g, &s).unwrap();
            for (y, pi) in out.data.values().iter().zip(&out.expected_load) {
                if let Some(y) = y {
                    sum += y / pi;
                    count += 1;
                }
            }
        }
        assert!((sum / count as f64 - 1.0).abs() < 0.005);
    }

    #[test]
    fn phase_order_single_wave() {
        let (g, s) = rsv_kernels();
        let mut sc = standard_scenario(7);
        sc.weeks = 60;
        sc.missing_weeks.clear();
        sc.rt_path = RtPath::Prescribed(single_wave_rt_path(60, 10, 15, 0.25));
        let out = simulate(&sc, &g, &s).unwrap();
        let check = epidemic_phase_check(&out);
        assert!(check.assessable);
        assert!(check.ordered, "{check:?}");
        assert!(check.load_peak_week > check.rt_peak_week);
    }

    #[test]
    fn constant_r_is_not_assessable() {
        let check = peak_ordering(&[1.0; 5], &[1.0, 2.0, 3.0, 2.0, 1.0], &[1.0; 5]);
        assert!(!check.assessable);
        assert!(!is_unimodal(&[1.0, 2.0, 1.0, 2.0]));
        assert!(is_unimodal(&[1.0, 2.0, 2.0, 1.0]));
    }
}
