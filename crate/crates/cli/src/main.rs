//! `spikeopt` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use spikeopt::hh::HH_ODE_TOL;
use spikeopt::phase_model::{
    builtin_catalog, fit_harmonics_with, parse_catalog, FitOptions, PhaseModel, Prc,
};
use spikeopt::schedule_sim::{simulate_phase, to_time_domain};
use spikeopt::sweep::{
    emit_plots, parse_m_grid, rows_to_csv, run_sweep, SweepOptions, Validation, DEFAULT_M_GRID,
};
use spikeopt::synthesis::{synthesize, Objective, SynthesisOptions, SynthesisResult};
use spikeopt::{fmt_sig12, to_json_sig12, Tolerances};

#[derive(Parser, Debug)]
#[command(name = "spikeopt", version, about = "Charge-balanced minimum- and maximum-time neural stimuli")]
struct Cli {
    /// JSON file with default values for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra phase models (one object or an array) added to the built-ins.
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    /// Uniform solver tolerance; overrides SPIKEOPT_TOL.
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize one optimal stimulus.
    Synthesize(SynthesizeArgs),
    /// Forward-simulate a saved synthesis result on its phase model.
    Simulate(SimulateArgs),
    /// Sweep M on the Hodgkin-Huxley model and compare with the state-space model.
    Validate(ValidateArgs),
    /// Sweep M and tabulate the feasible spike-time range.
    Sweep(SweepArgs),
    /// Fit a harmonic PRC to sampled data.
    FitPrc(FitArgs),
    /// Write matplotlib scripts for results, trajectories and sweep tables.
    EmitPlots(PlotArgs),
}

#[derive(Args, Debug)]
struct SynthesizeArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long = "M")]
    m: Option<f64>,
    #[arg(long)]
    objective: Option<Objective>,
    /// Spike time to realize (ms) when the maximum delay is unbounded.
    #[arg(long)]
    target_delay: Option<f64>,
    /// Result JSON path [default: result.json].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Control waveform CSV path [default: next to the result].
    #[arg(long)]
    waveform: Option<PathBuf>,
    /// Also write a plot script into this directory.
    #[arg(long)]
    plot_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    result: Option<PathBuf>,
    /// Trajectory CSV path [default: phase_run.csv].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long = "M-grid")]
    m_grid: Option<String>,
    #[arg(long)]
    cycles: Option<usize>,
    /// Table path [default: validation.csv].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long = "M-grid")]
    m_grid: Option<String>,
    /// Model name [default: hodgkin_huxley].
    #[arg(long)]
    model: Option<String>,
    /// Table path [default: sweep.csv].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Two-column `theta,z` samples; a header line is allowed.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long)]
    terms: Option<usize>,
    /// Natural frequency (rad/ms); given, the output is a full model entry.
    #[arg(long)]
    omega: Option<f64>,
    /// Model name used with `--omega` [default: fitted].
    #[arg(long)]
    name: Option<String>,
    /// Output JSON path [default: fit.json].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    files: Vec<PathBuf>,
    /// Directory for the scripts [default: plots].
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Inline model or the name of a catalog entry.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ModelSpec {
    Name(String),
    Inline(PhaseModel),
}

/// Contents of `--config`. Every field mirrors a flag of the same name.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    model: Option<ModelSpec>,
    #[serde(rename = "M")]
    m: Option<f64>,
    #[serde(rename = "M_grid")]
    m_grid: Option<String>,
    objective: Option<Objective>,
    target_delay: Option<f64>,
    tol: Option<f64>,
    catalog: Option<PathBuf>,
    out: Option<PathBuf>,
    waveform: Option<PathBuf>,
    plot_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    result: Option<PathBuf>,
    samples: Option<PathBuf>,
    terms: Option<usize>,
    omega: Option<f64>,
    name: Option<String>,
    cycles: Option<usize>,
    files: Option<Vec<PathBuf>>,
}

struct Ctx {
    config: RunConfig,
    catalog: Vec<PhaseModel>,
    /// `None` keeps each solver's own defaults.
    tol: Option<Tolerances>,
}

impl Ctx {
    fn load(cli: &Cli) -> Result<Self> {
        let config: RunConfig = match &cli.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        let mut catalog = builtin_catalog();
        if let Some(p) = cli.catalog.as_ref().or(config.catalog.as_ref()) {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let extra = parse_catalog(&text).with_context(|| format!("parsing {}", p.display()))?;
            for m in extra {
                catalog.retain(|c| c.name != m.name);
                catalog.push(m);
            }
        }
        if let Some(ModelSpec::Inline(m)) = &config.model {
            m.validate()?;
            catalog.retain(|c| c.name != m.name);
            catalog.push(m.clone());
        }
        let tol = match cli.tol.or(config.tol) {
            Some(t) if t > 0.0 && t.is_finite() => Some(Tolerances::uniform(t)),
            Some(t) => bail!("tolerance must be positive, got {t}"),
            None if std::env::var_os(spikeopt::TOL_ENV).is_some() => {
                Some(Tolerances::from_env().map_err(|e| anyhow!(e))?)
            }
            None => None,
        };
        Ok(Ctx { config, catalog, tol })
    }

    fn model(&self, flag: Option<&str>, fallback: Option<&str>) -> Result<PhaseModel> {
        let name = match (flag, &self.config.model) {
            (Some(n), _) => n.to_string(),
            (None, Some(ModelSpec::Name(n))) => n.clone(),
            (None, Some(ModelSpec::Inline(m))) => m.name.clone(),
            (None, None) => fallback.ok_or_else(|| anyhow!("no model given (use --model)"))?.to_string(),
        };
        self.catalog.iter().find(|m| m.name == name).cloned().ok_or_else(|| {
            let known: Vec<&str> = self.catalog.iter().map(|m| m.name.as_str()).collect();
            anyhow!("unknown model {name:?}; known: {}", known.join(", "))
        })
    }

    fn synthesis_options(&self, target: Option<f64>) -> SynthesisOptions {
        let mut o = SynthesisOptions { target_time: target, ..SynthesisOptions::default() };
        if let Some(t) = self.tol {
            o.quad_tol = t.quad;
            o.alpha_tol = t.root;
        }
        o
    }

    fn sim_tol(&self) -> f64 {
        self.tol.map_or(SweepOptions::default().sim_tol, |t| t.ode)
    }

    fn hh_tol(&self) -> f64 {
        self.tol.map_or(HH_ODE_TOL, |t| t.ode)
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or("result".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_synthesize(ctx: &Ctx, a: SynthesizeArgs) -> Result<()> {
    let c = &ctx.config;
    let model = ctx.model(a.model.as_deref(), None)?;
    let m = a.m.or(c.m).ok_or_else(|| anyhow!("no amplitude bound given (use --M)"))?;
    let objective = a.objective.or(c.objective).ok_or_else(|| anyhow!("no objective given (use --objective)"))?;
    let opts = ctx.synthesis_options(a.target_delay.or(c.target_delay));
    let result = synthesize(&model, m, objective, &opts)?;
    let control = to_time_domain(&model, &result.schedule)?;

    let out = a.out.or_else(|| c.out.clone()).unwrap_or_else(|| "result.json".into());
    let waveform = a.waveform.or_else(|| c.waveform.clone()).unwrap_or_else(|| sibling(&out, "_control.csv"));
    write(&out, &(to_json_sig12(&result)? + "\n"))?;
    write(&waveform, &control.to_csv())?;
    if let Some(dir) = a.plot_dir.or_else(|| c.plot_dir.clone()) {
        emit_plots(&[out.clone()], &dir)?;
    }
    if !result.pmp_report.all_passed() {
        eprintln!("warning: PMP checks did not all pass: {:?}", result.pmp_report);
    }
    println!(
        "{} {} M={} word={} T={} -> {}",
        result.model,
        result.objective,
        fmt_sig12(result.m),
        result.word,
        fmt_sig12(result.predicted_t),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary {
    model: String,
    spike_time: f64,
    predicted_t: f64,
    final_charge: f64,
}

fn cmd_simulate(ctx: &Ctx, a: SimulateArgs) -> Result<()> {
    let c = &ctx.config;
    let path = a.result.or_else(|| c.result.clone()).ok_or_else(|| anyhow!("no result file given (use --result)"))?;
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let result: SynthesisResult = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let model = ctx.model(Some(&result.model), None)?;
    let control = to_time_domain(&model, &result.schedule)?;
    let run = simulate_phase(&model, &control, ctx.sim_tol())?;
    let out = a.out.or_else(|| c.out.clone()).unwrap_or_else(|| "phase_run.csv".into());
    write(&out, &run.to_csv())?;
    let summary = SimulateSummary {
        model: result.model,
        spike_time: run.spike_time,
        predicted_t: result.predicted_t,
        final_charge: run.final_charge,
    };
    println!("{}", to_json_sig12(&summary)?);
    Ok(())
}

fn grid(flag: Option<String>, config: &Option<String>) -> Result<Vec<f64>> {
    let spec = flag.or_else(|| config.clone()).unwrap_or_else(|| DEFAULT_M_GRID.to_string());
    Ok(parse_m_grid(&spec)?)
}

fn report_rows(rows: &[spikeopt::sweep::SweepRow], out: &Path) -> Result<()> {
    write(out, &rows_to_csv(rows))?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    println!("{} rows ({} with errors) -> {}", rows.len(), failed, out.display());
    Ok(())
}

fn cmd_validate(ctx: &Ctx, a: ValidateArgs) -> Result<()> {
    let c = &ctx.config;
    let model = ctx.model(None, Some("hodgkin_huxley"))?;
    if model.name != "hodgkin_huxley" {
        bail!("validation needs the hodgkin_huxley model, got {:?}", model.name);
    }
    let m_grid = grid(a.m_grid, &c.m_grid)?;
    let cycles = a.cycles.or(c.cycles).unwrap_or(5);
    let validation = Validation::calibrated(cycles, ctx.hh_tol())?;
    let opts = SweepOptions {
        synthesis: ctx.synthesis_options(None),
        sim_tol: ctx.sim_tol(),
        validation: Some(validation),
    };
    let rows = run_sweep(&model, &m_grid, &opts);
    report_rows(&rows, &a.out.or_else(|| c.out.clone()).unwrap_or_else(|| "validation.csv".into()))
}

fn cmd_sweep(ctx: &Ctx, a: SweepArgs) -> Result<()> {
    let c = &ctx.config;
    let model = ctx.model(a.model.as_deref(), Some("hodgkin_huxley"))?;
    let m_grid = grid(a.m_grid, &c.m_grid)?;
    let opts = SweepOptions { synthesis: ctx.synthesis_options(None), sim_tol: ctx.sim_tol(), validation: None };
    let rows = run_sweep(&model, &m_grid, &opts);
    report_rows(&rows, &a.out.or_else(|| c.out.clone()).unwrap_or_else(|| "sweep.csv".into()))
}

fn read_samples(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(|ch: char| ch == ',' || ch.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let parsed = match cols.as_slice() {
            [t, z] => t.parse::<f64>().ok().zip(z.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some(p) => out.push(p),
            None if i == 0 => continue,
            None => bail!("{}:{}: expected two numbers", path.display(), i + 1),
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct FitReport<'a, T: Serialize> {
    rms: f64,
    iterations: usize,
    #[serde(flatten)]
    fitted: &'a T,
}

fn cmd_fit_prc(ctx: &Ctx, a: FitArgs) -> Result<()> {
    let c = &ctx.config;
    let path = a.samples.or_else(|| c.samples.clone()).ok_or_else(|| anyhow!("no samples given (use --samples)"))?;
    let terms = a.terms.or(c.terms).ok_or_else(|| anyhow!("no term count given (use --terms)"))?;
    let samples = read_samples(&path)?;
    let fit = fit_harmonics_with(&samples, terms, &FitOptions::default())?;
    let json = match a.omega.or(c.omega) {
        Some(omega) => {
            let name = a.name.or_else(|| c.name.clone()).unwrap_or_else(|| "fitted".into());
            let model = PhaseModel::new(name, omega, Prc::Harmonic(fit.prc.clone()))?;
            to_json_sig12(&FitReport { rms: fit.rms, iterations: fit.iterations, fitted: &model })?
        }
        None => to_json_sig12(&FitReport { rms: fit.rms, iterations: fit.iterations, fitted: &fit.prc })?,
    };
    let out = a.out.or_else(|| c.out.clone()).unwrap_or_else(|| "fit.json".into());
    write(&out, &(json + "\n"))?;
    println!("{} terms, rms {} -> {}", terms, fmt_sig12(fit.rms), out.display());
    Ok(())
}

fn cmd_emit_plots(ctx: &Ctx, a: PlotArgs) -> Result<()> {
    let c = &ctx.config;
    let files = if a.files.is_empty() { c.files.clone().unwrap_or_default() } else { a.files };
    if files.is_empty() {
        bail!("no input files given");
    }
    let dir = a.out_dir.or_else(|| c.out_dir.clone()).unwrap_or_else(|| "plots".into());
    for script in emit_plots(&files, &dir)? {
        println!("{}", script.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::load(&cli)?;
    match cli.command {
        Command::Synthesize(a) => cmd_synthesize(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Validate(a) => cmd_validate(&ctx, a),
        Command::Sweep(a) => cmd_sweep(&ctx, a),
        Command::FitPrc(a) => cmd_fit_prc(&ctx, a),
        Command::EmitPlots(a) => cmd_emit_plots(&ctx, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
