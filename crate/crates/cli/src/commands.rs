//! The four subcommands. Each reads its inputs, computes, then writes every
//! artifact from a single thread.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use wwrt_core::diagnostics::{summarize, PosteriorSummary, RHAT_THRESHOLD};
use wwrt_core::mcmc::{run_chains, ChainDraws, PosteriorDraws};
use wwrt_core::model::{Mode, ModelConfig};
use wwrt_core::series::{load_csv, CsvSchema, FlowSpec, Unit, WeeklySeries};
use wwrt_core::simulate::{epidemic_phase_check, simulate, PhaseCheck, Simulation};
use wwrt_core::ssm::{fit_mle, to_mode_b_input, FilterOutput, QuasiNewtonSettings, SsmParams};

use crate::config::{RunConfig, ScenarioConfig};
use crate::error::{CliError, Result};
use crate::manifest::Manifest;
use crate::svg::{scatter_chart, time_chart, Band, Overlay, TimeChart};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Units {
    /// Fit concentrations as read.
    Gcl,
    /// Fit loads; with a flow the input is converted from concentrations.
    Bcpd,
}

#[derive(Debug, Clone, Default)]
pub struct McmcOverrides {
    pub chains: Option<usize>,
    pub iters: Option<usize>,
    pub warmup: Option<usize>,
    pub thin: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct FitArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub mode: Mode,
    pub units: Units,
    pub flow: Option<f64>,
    pub config: Option<PathBuf>,
    pub overrides: McmcOverrides,
    pub jobs: Option<usize>,
    pub allow_nonconverged: bool,
    /// Mode B only: require `obs_sd` in the input instead of filtering.
    pub no_filter: bool,
}

#[derive(Debug, Clone)]
pub struct FilterArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub units: Units,
    pub flow: Option<f64>,
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub config: Option<PathBuf>,
    pub output: PathBuf,
    pub seed: Option<u64>,
    pub phase_check: bool,
}

#[derive(Debug, Clone)]
pub struct CompareArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    pub output: PathBuf,
}

pub struct FitOutcome {
    pub model_input: WeeklySeries,
    pub draws: PosteriorDraws,
    pub summary: PosteriorSummary,
    pub filter: Option<FilterOutput>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Agreement {
    pub correlation: f64,
    pub mae: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    pub reproduction: Agreement,
    pub infections: Agreement,
}

/// Reads the input CSV in the unit the fit works in.
pub fn read_input(path: &Path, units: Units, flow: Option<f64>) -> Result<WeeklySeries> {
    match (units, flow) {
        (Units::Gcl, Some(_)) => Err(CliError::Schema(
            "--flow converts concentrations to loads and needs --units bcpd".into(),
        )),
        (Units::Gcl, None) => Ok(load_csv(path, &CsvSchema::with_unit(Unit::GcPerLiter))?),
        (Units::Bcpd, None) => Ok(load_csv(path, &CsvSchema::with_unit(Unit::BGcPerDay))?),
        (Units::Bcpd, Some(f)) => {
            let conc = load_csv(path, &CsvSchema::with_unit(Unit::GcPerLiter))?;
            Ok(conc.to_load(&FlowSpec::new(f)?)?)
        }
    }
}

pub fn filter_series(series: &WeeklySeries, settings: &QuasiNewtonSettings) -> Result<FilterOutput> {
    let log10 = series.to_log10()?;
    let init = SsmParams::initial_guess(&log10);
    Ok(fit_mle(&log10, &init, settings)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(
    dir: &Path,
    name: &str,
    manifest: &mut Manifest,
    f: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| CliError::io(&path, e))?;
    manifest.artifacts.push(name.to_string());
    Ok(())
}

fn write_text(dir: &Path, name: &str, manifest: &mut Manifest, text: &str) -> Result<()> {
    write_file(dir, name, manifest, |w| {
        w.write_all(text.as_bytes()).map_err(|e| CliError::io(dir.join(name), e))
    })
}

/// Records the optimizer's best point next to the outputs before failing.
fn dump_filter_failure(dir: &Path, err: &CliError) {
    if let CliError::Core(wwrt_core::Error::NotConverged {
        best,
        best_loglik,
        iterations,
        grad_norm,
    }) = err
    {
        let body = json!({
            "best": best,
            "best_loglik": best_loglik,
            "iterations": iterations,
            "grad_norm": grad_norm,
        });
        let _ = std::fs::write(
            dir.join("filter_failure.json"),
            serde_json::to_string_pretty(&body).expect("serializes") + "\n",
        );
    }
}

fn filter_chart(series: &WeeklySeries, filter: &FilterOutput) -> String {
    let n = filter.filtered_mean.len();
    let dates: Vec<_> = (0..n).map(|t| series.date(t)).collect();
    let sd: Vec<f64> = filter.filtered_var.iter().map(|v| v.sqrt()).collect();
    let lo: Vec<f64> = (0..n).map(|t| filter.filtered_mean[t] - 2.0 * sd[t]).collect();
    let hi: Vec<f64> = (0..n).map(|t| filter.filtered_mean[t] + 2.0 * sd[t]).collect();
    let observed: Vec<Option<f64>> = series.values().iter().map(|v| v.map(f64::log10)).collect();
    time_chart(&TimeChart {
        title: "Observed and filtered log10 series",
        y_label: &format!("log10 {}", series.unit()),
        dates: &dates,
        band: Band {
            mean: &filter.filtered_mean,
            lo: &lo,
            hi: &hi,
        },
        reference: None,
        missing: &series.missing_weeks(),
        overlay: Some(Overlay {
            label: "observed",
            values: &observed,
            right_axis: false,
        }),
    })
}

fn write_filter_artifacts(
    dir: &Path,
    series: &WeeklySeries,
    filter: &FilterOutput,
    manifest: &mut Manifest,
) -> Result<WeeklySeries> {
    let mode_b = to_mode_b_input(filter)?;
    write_file(dir, "filter.csv", manifest, |w| Ok(filter.write_csv(w)?))?;
    write_file(dir, "mode_b_input.csv", manifest, |w| Ok(mode_b.write_csv(w)?))?;
    write_text(dir, "filter.svg", manifest, &filter_chart(series, filter))?;
    Ok(mode_b)
}

fn filter_details(filter: &FilterOutput) -> serde_json::Value {
    json!({
        "params": filter.params,
        "loglik": filter.loglik,
        "optimizer": filter.optimizer,
    })
}

pub fn cmd_filter(args: &FilterArgs) -> Result<FilterOutput> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let series = read_input(&args.input, args.units, args.flow)?;
    create_dir(&args.output)?;
    let filter = filter_series(&series, &cfg.filter).inspect_err(|e| dump_filter_failure(&args.output, e))?;

    let mut manifest = Manifest::new(
        "filter",
        json!({
            "units": args.units,
            "flow": args.flow,
            "filter_settings": cfg.filter,
            "start_date": series.start_date(),
            "weeks": series.len(),
            "ssm": filter_details(&filter),
        }),
    );
    manifest.add_input(&args.input)?;
    if let Some(c) = &args.config {
        manifest.add_input(c)?;
    }
    write_filter_artifacts(&args.output, &series, &filter, &mut manifest)?;
    manifest.write(&args.output)?;
    Ok(filter)
}

fn strip_obs_sd(series: WeeklySeries) -> Result<WeeklySeries> {
    if series.obs_sd().is_none() {
        return Ok(series);
    }
    Ok(WeeklySeries::new(series.start_date(), series.values().to_vec(), series.unit())?)
}

fn apply_overrides(cfg: &mut RunConfig, o: &McmcOverrides) {
    let m = &mut cfg.mcmc;
    if let Some(v) = o.chains {
        m.n_chains = v;
    }
    if let Some(v) = o.iters {
        m.n_iter = v;
    }
    if let Some(v) = o.warmup {
        m.n_warmup = v;
    }
    if let Some(v) = o.thin {
        m.thin = v;
    }
    if let Some(v) = o.seed {
        m.seed = v;
    }
}

fn write_draws<W: Write>(chain: &ChainDraws, n_weeks: usize, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["iteration".to_string(), "k".into(), "sigma_eps".into(), "beta".into()];
    if chain.sigma_y.is_some() {
        header.push("sigma_y".into());
    }
    header.extend((1..=n_weeks).map(|t| format!("z_{t}")));
    header.extend((1..=n_weeks).map(|t| format!("I_{t}")));
    w.write_record(&header).map_err(wwrt_core::Error::from)?;
    let mut row = Vec::with_capacity(header.len());
    for d in 0..chain.len() {
        row.clear();
        row.push(chain.iterations[d].to_string());
        row.push(chain.k[d].to_string());
        row.push(chain.sigma_eps[d].to_string());
        row.push(chain.beta[d].to_string());
        if let Some(s) = &chain.sigma_y {
            row.push(s[d].to_string());
        }
        row.extend(chain.z[d].iter().map(|z| z.to_string()));
        row.extend(chain.infections[d].iter().map(|i| i.to_string()));
        w.write_record(&row).map_err(wwrt_core::Error::from)?;
    }
    w.flush().map_err(|e| CliError::io("<draws>", e))
}

fn trajectory_charts(
    raw: &WeeklySeries,
    model_input: &WeeklySeries,
    summary: &PosteriorSummary,
) -> (String, String) {
    let n = model_input.len();
    let dates: Vec<_> = (0..n).map(|t| model_input.date(t)).collect();
    let missing = raw.missing_weeks();
    let signal_label = format!("wastewater ({})", model_input.unit());
    let cols = |s: &[wwrt_core::diagnostics::ParamSummary]| {
        (
            s.iter().map(|p| p.mean).collect::<Vec<_>>(),
            s.iter().map(|p| p.ci_low).collect::<Vec<_>>(),
            s.iter().map(|p| p.ci_high).collect::<Vec<_>>(),
        )
    };
    let (rm, rl, rh) = cols(&summary.reproduction);
    let (im, il, ih) = cols(&summary.infections);
    let chart = |title: &str, y_label: &str, mean: &[f64], lo: &[f64], hi: &[f64], reference| {
        time_chart(&TimeChart {
            title,
            y_label,
            dates: &dates,
            band: Band { mean, lo, hi },
            reference,
            missing: &missing,
            overlay: Some(Overlay {
                label: &signal_label,
                values: model_input.values(),
                right_axis: true,
            }),
        })
    };
    (
        chart("Effective reproduction number", "R_t", &rm, &rl, &rh, Some(1.0)),
        chart("Latent infections", "I_t", &im, &il, &ih, None),
    )
}

pub fn cmd_fit(args: &FitArgs) -> Result<FitOutcome> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    apply_overrides(&mut cfg, &args.overrides);
    cfg.mcmc.validate()?;
    let model_config: ModelConfig = cfg.model_config(args.mode)?;
    let raw = read_input(&args.input, args.units, args.flow)?;
    create_dir(&args.output)?;

    let mut manifest = Manifest::new("fit", serde_json::Value::Null);
    manifest.add_input(&args.input)?;
    if let Some(c) = &args.config {
        manifest.add_input(c)?;
    }

    let (model_input, filter) = match args.mode {
        Mode::RawHomoscedastic => (strip_obs_sd(raw.clone())?, None),
        Mode::FilteredKnownVar if raw.obs_sd().is_some() => (raw.clone(), None),
        Mode::FilteredKnownVar if args.no_filter => {
            return Err(CliError::Schema(
                "mode B needs an obs_sd column when filtering is disabled".into(),
            ))
        }
        Mode::FilteredKnownVar => {
            let f = filter_series(&raw, &cfg.filter).inspect_err(|e| dump_filter_failure(&args.output, e))?;
            let b = write_filter_artifacts(&args.output, &raw, &f, &mut manifest)?;
            (b, Some(f))
        }
    };

    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    log::info!(
        "fitting {} weeks: {} chains x {} iterations",
        model_input.len(),
        cfg.mcmc.n_chains,
        cfg.mcmc.n_iter
    );
    let draws = pool.install(|| run_chains(&model_input, &model_config, &cfg.mcmc))?;
    let summary = summarize(&draws, &model_config)?;
    let converged = summary.converged(RHAT_THRESHOLD);

    let dir = &args.output;
    write_file(dir, "model_input.csv", &mut manifest, |w| Ok(model_input.write_csv(w)?))?;
    write_file(dir, "summary.csv", &mut manifest, |w| Ok(summary.write_summary_csv(w)?))?;
    write_file(dir, "trajectory.csv", &mut manifest, |w| Ok(summary.write_trajectory_csv(w)?))?;
    for (c, chain) in draws.chains.iter().enumerate() {
        write_file(dir, &format!("draws_chain{}.csv", c + 1), &mut manifest, |w| {
            write_draws(chain, draws.n_weeks, w)
        })?;
    }
    let (rt_svg, it_svg) = trajectory_charts(&raw, &model_input, &summary);
    write_text(dir, "rt.svg", &mut manifest, &rt_svg)?;
    write_text(dir, "infections.svg", &mut manifest, &it_svg)?;

    manifest.details = json!({
        "mode": args.mode,
        "units": args.units,
        "flow": args.flow,
        "no_filter": args.no_filter,
        "jobs": jobs,
        "start_date": model_input.start_date(),
        "weeks": model_input.len(),
        "config": cfg,
        "kernels": {
            "generation": model_config.gen_kernel.weights(),
            "shedding": model_config.shed_kernel.weights(),
        },
        "ssm": filter.as_ref().map(filter_details),
        "diagnostics": {
            "max_scalar_rhat": summary.max_scalar_rhat(),
            "rhat_threshold": RHAT_THRESHOLD,
            "converged": converged,
            "acceptance": draws.chains.iter().map(|c| c.acceptance).collect::<Vec<_>>(),
        },
    });
    manifest.write(dir)?;

    if !converged {
        let rhat = summary.max_scalar_rhat();
        if args.allow_nonconverged {
            log::warn!("max scalar R-hat {rhat:.4} exceeds {RHAT_THRESHOLD}");
        } else {
            return Err(CliError::NonConvergence {
                rhat,
                threshold: RHAT_THRESHOLD,
            });
        }
    }
    Ok(FitOutcome {
        model_input,
        draws,
        summary,
        filter,
    })
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(Simulation, PhaseCheck)> {
    let mut cfg = ScenarioConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let scenario = cfg.scenario()?;
    let (gen, shed) = cfg.kernels.build()?;
    let sim = simulate(&scenario, &gen, &shed)?;
    let phase = epidemic_phase_check(&sim);

    let dir = &args.output;
    create_dir(dir)?;
    let mut manifest = Manifest::new(
        "simulate",
        json!({
            "scenario": cfg,
            "kernels": { "generation": gen.weights(), "shedding": shed.weights() },
            "data_unit": sim.data.unit(),
            "phase_check": phase,
        }),
    );
    if let Some(c) = &args.config {
        manifest.add_input(c)?;
    }
    write_file(dir, "data.csv", &mut manifest, |w| Ok(sim.data.write_csv(w)?))?;
    write_file(dir, "truth.csv", &mut manifest, |w| Ok(sim.write_truth_csv(w)?))?;
    if args.phase_check {
        write_file(dir, "phase_check.csv", &mut manifest, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["rt_peak_week", "it_peak_week", "load_peak_week", "assessable", "ordered"])
                .map_err(wwrt_core::Error::from)?;
            c.write_record([
                (phase.rt_peak_week + 1).to_string(),
                (phase.it_peak_week + 1).to_string(),
                (phase.load_peak_week + 1).to_string(),
                phase.assessable.to_string(),
                phase.ordered.to_string(),
            ])
            .map_err(wwrt_core::Error::from)?;
            c.flush().map_err(|e| CliError::io("<phase>", e))
        })?;
    }
    manifest.write(dir)?;
    Ok((sim, phase))
}

struct Trajectory {
    weeks: Vec<u64>,
    r_mean: Vec<f64>,
    i_mean: Vec<f64>,
}

fn read_trajectory(run_dir: &Path) -> Result<Trajectory> {
    let path = run_dir.join("trajectory.csv");
    let file = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers().map_err(wwrt_core::Error::from)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Schema(format!("{} lacks column {name}", path.display())))
    };
    let (cw, cr, ci) = (col("week")?, col("R_mean")?, col("I_mean")?);
    let mut t = Trajectory {
        weeks: vec![],
        r_mean: vec![],
        i_mean: vec![],
    };
    for rec in rdr.records() {
        let rec = rec.map_err(wwrt_core::Error::from)?;
        let parse = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| CliError::Schema(format!("{}: bad number {:?}", path.display(), &rec[i])))
        };
        t.weeks.push(
            rec[cw]
                .parse()
                .map_err(|_| CliError::Schema(format!("{}: bad week {:?}", path.display(), &rec[cw])))?,
        );
        t.r_mean.push(parse(cr)?);
        t.i_mean.push(parse(ci)?);
    }
    Ok(t)
}

fn manifest_start_date(run_dir: &Path) -> Option<String> {
    let text = std::fs::read_to_string(run_dir.join("manifest.json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v["details"]["start_date"].as_str().map(str::to_string)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn agreement(x: &[f64], y: &[f64]) -> Agreement {
    let mae = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64;
    Agreement {
        correlation: pearson(x, y),
        mae,
        n: x.len(),
    }
}

pub fn cmd_compare(args: &CompareArgs) -> Result<Comparison> {
    let a = read_trajectory(&args.first)?;
    let b = read_trajectory(&args.second)?;
    if a.weeks != b.weeks {
        return Err(CliError::Schema("runs cover different weeks".into()));
    }
    if let (Some(da), Some(db)) = (manifest_start_date(&args.first), manifest_start_date(&args.second)) {
        if da != db {
            return Err(CliError::Schema(format!("runs start on different dates: {da} vs {db}")));
        }
    }
    if a.weeks.is_empty() {
        return Err(CliError::Schema("trajectories are empty".into()));
    }
    let cmp = Comparison {
        reproduction: agreement(&a.r_mean, &b.r_mean),
        infections: agreement(&a.i_mean, &b.i_mean),
    };

    let dir = &args.output;
    create_dir(dir)?;
    let mut manifest = Manifest::new(
        "compare",
        json!({
            "first": args.first.display().to_string(),
            "second": args.second.display().to_string(),
            "comparison": cmp,
        }),
    );
    manifest.add_input(&args.first.join("trajectory.csv"))?;
    manifest.add_input(&args.second.join("trajectory.csv"))?;
    write_file(dir, "agreement.csv", &mut manifest, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["quantity", "correlation", "mae", "n"]).map_err(wwrt_core::Error::from)?;
        for (q, ag) in [("R", cmp.reproduction), ("I", cmp.infections)] {
            c.write_record([q.to_string(), ag.correlation.to_string(), ag.mae.to_string(), ag.n.to_string()])
                .map_err(wwrt_core::Error::from)?;
        }
        c.flush().map_err(|e| CliError::io("<agreement>", e))
    })?;
    let first = args.first.display().to_string();
    let second = args.second.display().to_string();
    write_text(
        dir,
        "scatter_rt.svg",
        &mut manifest,
        &scatter_chart("Weekly posterior mean R_t", &first, &second, &a.r_mean, &b.r_mean),
    )?;
    write_text(
        dir,
        "scatter_it.svg",
        &mut manifest,
        &scatter_chart("Weekly posterior mean I_t", &first, &second, &a.i_mean, &b.i_mean),
    )?;
    manifest.write(dir)?;
    Ok(cmp)
}
