use chrono::NaiveDate;
use wwrt_core::kernels::{KernelKind, KernelWeights};
use wwrt_core::mcmc::{run_chains_with, Blocks, McmcSettings, SamplerControl};
use wwrt_core::model::{
    joint_logdensity, joint_terms, LatentState, Mode, ModelConfig, PriorSpec, ScalarParams,
};
use wwrt_core::series::{Unit, WeeklySeries};
use wwrt_oracles::toy::{
    enumerate_infections, enumerate_infections_beta_marginal, joint_log_density, ToyModel,
    ToyState,
};
use wwrt_oracles::total_variation;

const GEN: [f64; 2] = [0.7, 0.3];
const SHED: [f64; 2] = [0.6, 0.4];
const CAP: u64 = 30;

fn config(mode: Mode, anchor: f64) -> ModelConfig {
    ModelConfig::new(
        KernelWeights::from_weights(KernelKind::Generation, GEN.to_vec()).unwrap(),
        KernelWeights::from_weights(KernelKind::Shedding, SHED.to_vec()).unwrap(),
        anchor,
        mode,
        PriorSpec::default(),
    )
    .unwrap()
}

fn toy(anchor: f64) -> ToyModel {
    let p = PriorSpec::default();
    ToyModel {
        gen: GEN.to_vec(),
        shed: SHED.to_vec(),
        anchor,
        z1_mean: p.z1_mean,
        z1_sd: p.z1_sd,
        sigma_eps_log_mean: p.sigma_eps_log_mean,
        sigma_eps_log_sd: p.sigma_eps_log_sd,
        k_log_mean: p.k_log_mean,
        k_log_sd: p.k_log_sd,
        k_upper: p.k_upper,
        log_beta_mean: p.log_beta_mean,
        log_beta_sd: p.log_beta_sd,
        sigma_y_mean: p.sigma_y_mean,
        sigma_y_sd: p.sigma_y_sd,
        sigma_y_min: 1e-3,
    }
}

fn series(values: &[Option<f64>]) -> WeeklySeries {
    let start = NaiveDate::from_ymd_opt(2023, 9, 4).unwrap();
    WeeklySeries::new(start, values.to_vec(), Unit::BGcPerDay).unwrap()
}

fn params() -> ScalarParams {
    ScalarParams {
        k: 4.0,
        sigma_eps: 0.15,
        beta: 2.0,
        sigma_y: Some(0.3),
    }
}

fn toy_state(p: &ScalarParams, s: &LatentState) -> ToyState {
    ToyState {
        k: p.k,
        sigma_eps: p.sigma_eps,
        beta: p.beta,
        sigma_y: p.sigma_y,
        z: s.z.clone(),
        infections: s.infections.clone(),
    }
}

#[test]
fn joint_density_matches_term_by_term_sum() {
    let y = [Some(21.0), None, Some(30.5)];
    let cases = [
        (vec![0.8, 1.1, 0.95], vec![9, 14, 0]),
        (vec![-0.3, 0.2, 1.7], vec![0, 3, 40]),
        (vec![1.0, 1.0, 1.0], vec![10, 10, 10]),
    ];
    for (z, infections) in cases {
        let state = LatentState { z, infections };
        let p = params();
        let got = joint_logdensity(&state, &p, &series(&y), &config(Mode::RawHomoscedastic, 10.0)).unwrap();
        let want = joint_log_density(&toy(10.0), &toy_state(&p, &state), &y, None);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
}

#[test]
fn known_sd_joint_density_matches_term_by_term_sum() {
    let y = [Some(12.0), Some(15.0), Some(9.0)];
    let sd = [0.2, 0.35, 0.5];
    let data = series(&y).with_obs_sd(sd.to_vec()).unwrap();
    let state = LatentState {
        z: vec![1.2, 0.9, 1.05],
        infections: vec![7, 6, 5],
    };
    let p = ScalarParams {
        sigma_y: None,
        ..params()
    };
    let got = joint_logdensity(&state, &p, &data, &config(Mode::FilteredKnownVar, 10.0)).unwrap();
    let want = joint_log_density(&toy(10.0), &toy_state(&p, &state), &y, Some(&sd));
    assert!((got - want).abs() < 1e-10, "{got} vs {want}");
}

#[test]
fn all_missing_has_no_observation_term() {
    let y = [None, None, None];
    let state = LatentState {
        z: vec![1.0, 1.1, 1.2],
        infections: vec![10, 12, 13],
    };
    let terms = joint_terms(&state, &params(), &series(&y), &config(Mode::RawHomoscedastic, 10.0)).unwrap();
    assert_eq!(terms.observations, 0.0);
}

fn sampled_trajectory_frequencies(
    y: &[Option<f64>],
    p: ScalarParams,
    z: Vec<f64>,
    blocks: Blocks,
    iters: usize,
) -> Vec<f64> {
    let init = LatentState {
        z,
        infections: vec![10, 10, 10],
    };
    let settings = McmcSettings {
        n_chains: 2,
        n_iter: iters / 2 + 20_000,
        n_warmup: 20_000,
        thin: 1,
        seed: 11,
        ..McmcSettings::default()
    };
    let control = SamplerControl {
        blocks,
        init: Some((p, init)),
        infection_cap: Some(CAP),
    };
    let draws = run_chains_with(&series(y), &config(Mode::RawHomoscedastic, 10.0), &settings, &control).unwrap();
    let side = (CAP + 1) as usize;
    let mut counts = vec![0.0; side * side * side];
    let mut total = 0.0;
    for chain in &draws.chains {
        for inf in &chain.infections {
            let idx = (inf[0] as usize * side + inf[1] as usize) * side + inf[2] as usize;
            counts[idx] += 1.0;
            total += 1.0;
        }
    }
    counts.iter().map(|c| c / total).collect()
}

#[test]
fn infection_updates_target_enumerated_posterior() {
    let y = [Some(21.0), None, Some(30.5)];
    let z = vec![1.0, 1.15, 0.9];
    let p = params();
    let state = toy_state(&p, &LatentState { z: z.clone(), infections: vec![0; 3] });
    let exact: Vec<f64> = enumerate_infections(&toy(10.0), &state, &y, CAP)
        .into_iter()
        .map(|(_, w)| w)
        .collect();
    let blocks = Blocks {
        k: false,
        sigma_eps: false,
        beta: false,
        sigma_y: false,
        z: false,
        infections: true,
        level: false,
    };
    let freq = sampled_trajectory_frequencies(&y, p, z, blocks, 1_000_000);
    let tv = total_variation(&freq, &exact);
    assert!(tv < 0.05, "total variation {tv}");
}

#[test]
fn level_and_beta_moves_target_beta_marginal() {
    let y = [Some(21.0), Some(26.0), Some(30.5)];
    let z = vec![1.0, 1.15, 0.9];
    let p = params();
    let state = toy_state(&p, &LatentState { z: z.clone(), infections: vec![0; 3] });
    let exact: Vec<f64> =
        enumerate_infections_beta_marginal(&toy(10.0), &state, &y, CAP, (-4.0, 7.0), 300)
            .into_iter()
            .map(|(_, w)| w)
            .collect();
    let blocks = Blocks {
        k: false,
        sigma_eps: false,
        beta: true,
        sigma_y: false,
        z: false,
        infections: true,
        level: true,
    };
    let freq = sampled_trajectory_frequencies(&y, p, z, blocks, 600_000);
    let tv = total_variation(&freq, &exact);
    assert!(tv < 0.05, "total variation {tv}");
}
