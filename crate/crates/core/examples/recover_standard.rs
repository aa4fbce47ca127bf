//! Simulates the standard two-wave scenario, fits it, and prints recovery.
//!
//! Usage: `cargo run --release -p wwrt-core --example recover_standard -- [seed] [iters]`

use std::time::Instant;

use wwrt_core::diagnostics::summarize;
use wwrt_core::kernels::{gamma_from_moments, generation_kernel_by_mass, shedding_kernel_by_mass};
use wwrt_core::mcmc::{run_chains, McmcSettings};
use wwrt_core::model::{Mode, ModelConfig, PriorSpec};
use wwrt_core::simulate::{simulate, standard_scenario};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;
    let iters: usize = args.next().map_or(Ok(60_000), |s| s.parse())?;

    let gen = generation_kernel_by_mass(&gamma_from_moments(7.5, 2.1)?, 0.99)?;
    let shed = shedding_kernel_by_mass(&gamma_from_moments(4.6, 2.0)?, 0.99)?;
    let scenario = standard_scenario(seed);
    let truth = simulate(&scenario, &gen, &shed)?;
    let config = ModelConfig::new(gen, shed, scenario.anchor_mean, Mode::RawHomoscedastic, PriorSpec::default())?;
    let settings = McmcSettings {
        n_iter: iters,
        n_warmup: iters / 2,
        seed,
        ..McmcSettings::default()
    };
    let start = Instant::now();
    let draws = run_chains(&truth.data, &config, &settings)?;
    let elapsed = start.elapsed();
    let summary = summarize(&draws, &config)?;
    println!("elapsed {elapsed:?}");
    for s in &summary.scalars {
        println!(
            "{:<10} mean {:>9.4} ci [{:>9.4}, {:>9.4}] rhat {:.3} ess {:>7.1}",
            s.name, s.mean, s.ci_low, s.ci_high, s.rhat, s.ess
        );
    }
    for c in &draws.chains {
        println!("{:?}", c.acceptance);
    }
    let p = scenario.true_params;
    println!("truth k {} sigma_eps {} beta {} sigma_y {:?}", p.k, p.sigma_eps, p.beta, p.sigma_y);
    let cover = summary
        .reproduction
        .iter()
        .zip(&truth.reproduction)
        .filter(|(s, r)| s.ci_low <= **r && **r <= s.ci_high)
        .count();
    let max_rhat_r = summary.reproduction.iter().map(|s| s.rhat).fold(0.0, f64::max);
    println!("R_t coverage {cover}/{} max R_t rhat {max_rhat_r:.3}", truth.reproduction.len());
    Ok(())
}
