//! Sweeps over the amplitude bound M, state-space validation tables and plot
//! scripts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmt_sig12;
use crate::hh::{apply_control_from, calibrate_baseline, limit_cycle, spike_time_error, Anchor, HHParams, HhError, LimitCycle};
use crate::phase_model::PhaseModel;
use crate::schedule_sim::{simulate_phase, to_time_domain};
use crate::synthesis::{synthesize, Objective, SynthesisError, SynthesisOptions, SynthesisResult};

/// Unforced HH period the state-space model is calibrated to, ms.
pub const HH_TARGET_PERIOD: f64 = 14.64;
/// Default M grid: 50 points on `[0.05, 2.5]`.
pub const DEFAULT_M_GRID: &str = "0.05:2.5:50";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("bad M grid {0:?}: expected `lo:hi:n` or a comma list of ascending positive values")]
    InvalidGrid(String),
    #[error("missing input file {0}")]
    MissingInput(PathBuf),
    #[error("unrecognized input file {0}")]
    UnknownInput(PathBuf),
    #[error(transparent)]
    Hh(#[from] HhError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses `lo:hi:n` (n evenly spaced points, ends included) or `a,b,c`.
pub fn parse_m_grid(spec: &str) -> Result<Vec<f64>, SweepError> {
    let bad = || SweepError::InvalidGrid(spec.to_string());
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let grid: Vec<f64> = if parts.len() == 3 {
        let lo: f64 = parts[0].parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].parse().map_err(|_| bad())?;
        let n: usize = parts[2].parse().map_err(|_| bad())?;
        match n {
            0 => return Err(bad()),
            1 => vec![lo],
            _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
        }
    } else if parts.len() == 1 {
        spec.split(',').map(|s| s.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_, _>>()?
    } else {
        return Err(bad());
    };
    let ascending = grid.windows(2).all(|w| w[1] > w[0]);
    if grid.is_empty() || !ascending || grid.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
        return Err(bad());
    }
    Ok(grid)
}

/// One M value of a sweep. Missing entries are failures described in `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "M")]
    pub m: f64,
    pub min_word: Option<String>,
    #[serde(rename = "min_T")]
    pub min_t: Option<f64>,
    pub max_word: Option<String>,
    #[serde(rename = "max_T")]
    pub max_t: Option<f64>,
    /// Singular holds of both signs make the maximum time unbounded.
    pub max_unbounded: bool,
    /// Spike times from forward simulation of the phase model.
    #[serde(rename = "phase_min_T")]
    pub phase_min_t: Option<f64>,
    #[serde(rename = "phase_max_T")]
    pub phase_max_t: Option<f64>,
    /// Mean inter-spike interval of the stimulated state-space model.
    #[serde(rename = "state_min_ISI")]
    pub state_min_isi: Option<f64>,
    #[serde(rename = "state_max_ISI")]
    pub state_max_isi: Option<f64>,
    pub abs_err_min: Option<f64>,
    pub abs_err_max: Option<f64>,
    pub error: Option<String>,
}

/// Calibrated state-space model used by validation sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub params: HHParams,
    pub cycle: LimitCycle,
    pub n_cycles: usize,
    pub anchor: Anchor,
    pub tol: f64,
}

impl Validation {
    /// Calibrates the default parameters to [`HH_TARGET_PERIOD`].
    pub fn calibrated(n_cycles: usize, tol: f64) -> Result<Self, SweepError> {
        let defaults = HHParams::default();
        let params = defaults.with_baseline(calibrate_baseline(&defaults, HH_TARGET_PERIOD)?);
        let cycle = limit_cycle(&params, tol)?;
        Ok(Validation { params, cycle, n_cycles, anchor: Anchor::Peak, tol })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub synthesis: SynthesisOptions,
    pub sim_tol: f64,
    pub validation: Option<Validation>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { synthesis: SynthesisOptions::default(), sim_tol: 1e-10, validation: None }
    }
}

struct Side {
    word: Option<String>,
    t: Option<f64>,
    phase_t: Option<f64>,
    isi: Option<f64>,
    err: Option<f64>,
    unbounded: bool,
}

fn run_side(
    model: &PhaseModel,
    m: f64,
    objective: Objective,
    opts: &SweepOptions,
    errors: &mut Vec<String>,
) -> Side {
    let mut side = Side { word: None, t: None, phase_t: None, isi: None, err: None, unbounded: false };
    let result: SynthesisResult = match synthesize(model, m, objective, &opts.synthesis) {
        Ok(r) => r,
        Err(SynthesisError::TargetRequired) => {
            side.unbounded = true;
            return side;
        }
        Err(e) => {
            errors.push(format!("{objective}: {e}"));
            return side;
        }
    };
    side.word = Some(result.word.to_string());
    side.t = Some(result.predicted_t);
    let control = match to_time_domain(model, &result.schedule) {
        Ok(c) => c,
        Err(e) => {
            errors.push(format!("{objective}: {e}"));
            return side;
        }
    };
    match simulate_phase(model, &control, opts.sim_tol) {
        Ok(run) => side.phase_t = Some(run.spike_time),
        Err(e) => errors.push(format!("{objective}: {e}")),
    }
    if let Some(v) = &opts.validation {
        match apply_control_from(&v.params, &v.cycle, &control, v.n_cycles, v.anchor, v.tol) {
            Ok(run) => {
                let isis = &run.train.inter_spike_intervals;
                let mean = isis.iter().sum::<f64>() / isis.len() as f64;
                side.isi = Some(mean);
                side.err = Some(spike_time_error(result.predicted_t, mean));
            }
            Err(e) => errors.push(format!("{objective} state-space: {e}")),
        }
    }
    side
}

pub fn sweep_row(model: &PhaseModel, m: f64, opts: &SweepOptions) -> SweepRow {
    let mut errors = Vec::new();
    let lo = run_side(model, m, Objective::Min, opts, &mut errors);
    let hi = run_side(model, m, Objective::Max, opts, &mut errors);
    SweepRow {
        m,
        min_word: lo.word,
        min_t: lo.t,
        max_word: hi.word,
        max_t: hi.t,
        max_unbounded: hi.unbounded,
        phase_min_t: lo.phase_t,
        phase_max_t: hi.phase_t,
        state_min_isi: lo.isi,
        state_max_isi: hi.isi,
        abs_err_min: lo.err,
        abs_err_max: hi.err,
        error: (!errors.is_empty()).then(|| errors.join("; ")),
    }
}

/// Rows are computed concurrently and returned in grid order.
pub fn run_sweep(model: &PhaseModel, grid: &[f64], opts: &SweepOptions) -> Vec<SweepRow> {
    grid.par_iter().map(|&m| sweep_row(model, m, opts)).collect()
}

/// Sweep of the Hodgkin-Huxley phase model with state-space columns.
pub fn run_validation(grid: &[f64], n_cycles: usize, tol: f64) -> Result<Vec<SweepRow>, SweepError> {
    let validation = Validation::calibrated(n_cycles, tol)?;
    let opts = SweepOptions { validation: Some(validation), ..SweepOptions::default() };
    Ok(run_sweep(&PhaseModel::hodgkin_huxley(), grid, &opts))
}

pub const SWEEP_CSV_HEADER: &str = "M,min_word,min_T,max_word,max_T,phase_min_T,phase_max_T,state_min_ISI,state_max_ISI,abs_err_min,abs_err_max,error";

fn opt_num(x: Option<f64>) -> String {
    x.map(fmt_sig12).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let max_t = if r.max_unbounded { "unbounded".to_string() } else { opt_num(r.max_t) };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_sig12(r.m),
            r.min_word.as_deref().unwrap_or(""),
            opt_num(r.min_t),
            r.max_word.as_deref().unwrap_or(""),
            max_t,
            opt_num(r.phase_min_t),
            opt_num(r.phase_max_t),
            opt_num(r.state_min_isi),
            opt_num(r.state_max_isi),
            opt_num(r.abs_err_min),
            opt_num(r.abs_err_max),
            csv_field(r.error.as_deref().unwrap_or("")),
        );
    }
    out
}

const RESULT_PLOT: &str = r#"import json, sys
import matplotlib.pyplot as plt

result = json.load(open(RESULT))
t, u = [0.0], []
for seg in result["schedule"]["segments"]:
    u.append(seg["u"])
    t.append(t[-1] + seg["duration"])
fig, axes = plt.subplots(2 if TRAJECTORY else 1, 1, sharex=True, squeeze=False)
ax = axes[0][0]
ax.stairs(u, t)
ax.set_ylabel("u (uA/cm^2)")
ax.set_title("%s  %s  M=%g  T=%.4g ms" % (result["model"], result["word"], result["M"], result["predicted_T"]))
if TRAJECTORY:
    rows = [line.split(",") for line in open(TRAJECTORY).read().split()[1:]]
    axes[1][0].plot([float(r[0]) for r in rows], [float(r[1]) for r in rows])
    axes[1][0].set_ylabel("theta (rad)")
axes[-1][0].set_xlabel("t (ms)")
fig.savefig(OUTPUT)
"#;

const SWEEP_PLOT: &str = r#"import csv
import matplotlib.pyplot as plt

def num(s):
    try:
        return float(s)
    except ValueError:
        return None

rows = list(csv.DictReader(open(SWEEP)))
pts = [(num(r["M"]), num(r["min_T"]), num(r["max_T"])) for r in rows]
pts = [p for p in pts if None not in p]
m = [p[0] for p in pts]
fig, ax = plt.subplots()
ax.fill_betweenx(m, [p[1] for p in pts], [p[2] for p in pts], alpha=0.3)
ax.plot([p[1] for p in pts], m, "*")
ax.plot([p[2] for p in pts], m, "*")
ax.set_xlabel("spike time (ms)")
ax.set_ylabel("M (uA/cm^2)")
fig.savefig(OUTPUT)
"#;

const ERROR_PLOT: &str = r#"import csv
import matplotlib.pyplot as plt

def num(s):
    try:
        return float(s)
    except ValueError:
        return None

rows = list(csv.DictReader(open(SWEEP)))
fig, ax = plt.subplots()
for t_key, e_key, marker in (("min_T", "abs_err_min", "o"), ("max_T", "abs_err_max", "s")):
    pts = [(num(r[t_key]), num(r[e_key]), num(r["M"])) for r in rows]
    pts = [p for p in pts if None not in p]
    sc = ax.scatter([p[0] for p in pts], [p[1] for p in pts], c=[p[2] for p in pts], marker=marker)
fig.colorbar(sc, label="M (uA/cm^2)")
ax.set_xlabel("phase-model spike time (ms)")
ax.set_ylabel("absolute error (ms)")
fig.savefig(OUTPUT)
"#;

enum InputKind {
    Result,
    PhaseRun,
    Sweep { validated: bool },
}

fn classify(path: &Path) -> Result<InputKind, SweepError> {
    let text = fs::read_to_string(path)?;
    if let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) {
        if v.get("schedule").is_some() {
            return Ok(InputKind::Result);
        }
    }
    let header = text.lines().next().unwrap_or("");
    if header.starts_with("t,theta,p") {
        return Ok(InputKind::PhaseRun);
    }
    if header == SWEEP_CSV_HEADER {
        let validated = text.lines().skip(1).any(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            cols.len() > 9 && !cols[9].is_empty()
        });
        return Ok(InputKind::Sweep { validated });
    }
    Err(SweepError::UnknownInput(path.to_path_buf()))
}

fn py_str(p: &Path) -> String {
    format!("{:?}", p.to_string_lossy())
}

/// Writes one matplotlib script per figure into `out_dir`.
///
/// A synthesis result gives a control panel, with a phase panel when a
/// `t,theta,p` trajectory is also supplied. A sweep table gives the feasible
/// band; a validation table gives the error map.
pub fn emit_plots(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>, SweepError> {
    for p in inputs {
        if !p.is_file() {
            return Err(SweepError::MissingInput(p.clone()));
        }
    }
    let mut results = Vec::new();
    let mut trajectories = Vec::new();
    let mut sweeps = Vec::new();
    for p in inputs {
        match classify(p)? {
            InputKind::Result => results.push(p),
            InputKind::PhaseRun => trajectories.push(p),
            InputKind::Sweep { validated } => sweeps.push((p, validated)),
        }
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut emit = |stem: &str, header: String, body: &str| -> Result<(), SweepError> {
        let script = out_dir.join(format!("{stem}_plot.py"));
        fs::write(&script, format!("{header}{body}"))?;
        written.push(script);
        Ok(())
    };
    for (i, r) in results.iter().enumerate() {
        let stem = r.file_stem().map_or("result".into(), |s| s.to_string_lossy().into_owned());
        let traj = trajectories.get(i).map_or("None".to_string(), |t| py_str(t));
        let png = out_dir.join(format!("{stem}.png"));
        let header = format!("RESULT = {}\nTRAJECTORY = {}\nOUTPUT = {}\n", py_str(r), traj, py_str(&png));
        emit(&stem, header, RESULT_PLOT)?;
    }
    for (s, validated) in sweeps {
        let stem = s.file_stem().map_or("sweep".into(), |x| x.to_string_lossy().into_owned());
        let png = out_dir.join(format!("{stem}.png"));
        let header = format!("SWEEP = {}\nOUTPUT = {}\n", py_str(s), py_str(&png));
        emit(&stem, header.clone(), SWEEP_PLOT)?;
        if validated {
            let png = out_dir.join(format!("{stem}_error.png"));
            let header = format!("SWEEP = {}\nOUTPUT = {}\n", py_str(s), py_str(&png));
            emit(&format!("{stem}_error"), header, ERROR_PLOT)?;
        }
    }
    Ok(written)
}
