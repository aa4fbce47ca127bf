use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wwrt_cli::commands::{
    cmd_compare, cmd_filter, cmd_fit, cmd_simulate, CompareArgs, FilterArgs, FitArgs, McmcOverrides,
    SimulateArgs, Units,
};
use wwrt_cli::Result;
use wwrt_core::model::Mode;

#[derive(Parser)]
#[command(name = "wwrt", version, about = "Estimate R_t and latent infections from weekly wastewater data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the renewal model and write summaries, draws and plots.
    Fit(FitCmd),
    /// Fit the state-space trend model and write filtered loads.
    Filter(FilterCmd),
    /// Simulate a synthetic epidemic with ground truth.
    Simulate(SimulateCmd),
    /// Compare weekly posterior means of two fit runs.
    Compare(CompareCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    A,
    B,
}

#[derive(Clone, Copy, ValueEnum)]
enum UnitsArg {
    Gcl,
    Bcpd,
}

impl From<UnitsArg> for Units {
    fn from(u: UnitsArg) -> Units {
        match u {
            UnitsArg::Gcl => Units::Gcl,
            UnitsArg::Bcpd => Units::Bcpd,
        }
    }
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// gcl: values are concentrations. bcpd: values are loads, or
    /// concentrations converted with --flow.
    #[arg(long, value_enum, default_value = "gcl")]
    units: UnitsArg,
    /// Median daily influent flow in liters per day.
    #[arg(long)]
    flow: Option<f64>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FitCmd {
    #[command(flatten)]
    io: InputArgs,
    #[arg(long, value_enum, default_value = "a", ignore_case = true)]
    mode: ModeArg,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for chains.
    #[arg(long)]
    jobs: Option<usize>,
    /// Report R-hat above threshold as a warning instead of exit code 3.
    #[arg(long)]
    allow_nonconverged: bool,
    /// Mode B: use the obs_sd column as is and never run the filter.
    #[arg(long)]
    no_filter: bool,
}

#[derive(Args)]
struct FilterCmd {
    #[command(flatten)]
    io: InputArgs,
}

#[derive(Args)]
struct SimulateCmd {
    /// TOML scenario; the standard scenario when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the peak-week ordering of R, infections and load.
    #[arg(long)]
    phase_check: bool,
}

#[derive(Args)]
struct CompareCmd {
    first: PathBuf,
    second: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(c) => {
            let out = cmd_fit(&FitArgs {
                input: c.io.input,
                output: c.io.output,
                mode: match c.mode {
                    ModeArg::A => Mode::RawHomoscedastic,
                    ModeArg::B => Mode::FilteredKnownVar,
                },
                units: c.io.units.into(),
                flow: c.io.flow,
                config: c.io.config,
                overrides: McmcOverrides {
                    chains: c.chains,
                    iters: c.iters,
                    warmup: c.warmup,
                    thin: c.thin,
                    seed: c.seed,
                },
                jobs: c.jobs,
                allow_nonconverged: c.allow_nonconverged,
                no_filter: c.no_filter,
            })?;
            for s in &out.summary.scalars {
                println!(
                    "{:<10} mean {:>10.4}  95% CI [{:.4}, {:.4}]  R-hat {:.4}  ESS {:.0}",
                    s.name, s.mean, s.ci_low, s.ci_high, s.rhat, s.ess
                );
            }
        }
        Command::Filter(c) => {
            let f = cmd_filter(&FilterArgs {
                input: c.io.input,
                output: c.io.output,
                units: c.io.units.into(),
                flow: c.io.flow,
                config: c.io.config,
            })?;
            println!(
                "sigma_w {:.6}  sigma_v {:.6}  psi {:.6}  loglik {:.4}",
                f.params.sigma_w, f.params.sigma_v, f.params.psi, f.loglik
            );
        }
        Command::Simulate(c) => {
            let show = c.phase_check;
            let (_, phase) = cmd_simulate(&SimulateArgs {
                config: c.config,
                output: c.output,
                seed: c.seed,
                phase_check: c.phase_check,
            })?;
            if show {
                println!(
                    "peak weeks: R {} / I {} / load {}",
                    phase.rt_peak_week + 1,
                    phase.it_peak_week + 1,
                    phase.load_peak_week + 1
                );
                if !phase.assessable {
                    println!("R path is not unimodal; ordering not assessed");
                } else if phase.ordered {
                    println!("ordering R -> I -> load holds");
                } else {
                    println!("ordering R -> I -> load does NOT hold");
                }
            }
        }
        Command::Compare(c) => {
            let cmp = cmd_compare(&CompareArgs {
                first: c.first,
                second: c.second,
                output: c.output,
            })?;
            for (q, a) in [("R_t", cmp.reproduction), ("I_t", cmp.infections)] {
                println!("{q}: correlation {:.6}  MAE {:.6}", a.correlation, a.mae);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
