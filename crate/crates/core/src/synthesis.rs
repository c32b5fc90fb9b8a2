//! Charge-balanced minimum- and maximum-time control synthesis.
//!
//! Bang arcs use `u = -M` (X, field `ω - MZ`) or `u = +M` (Y, field `ω + MZ`).
//! Every bang-bang switch sits on a common level set `Z(θ) = α`, so a word is
//! parameterized by the single scalar `α` and charge balance becomes a 1-D
//! root problem in `α`.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{find_root_bracketed, integrate_adaptive, Interval, NumericsError};
use crate::phase_model::{analyze_structure, invert_prc, ModelError, PhaseModel, PrcStructure};

/// Bang arcs whose phase velocity dips to this level count as stalled.
pub const FEASIBILITY_GUARD: f64 = 1e-9;
/// Interior samples per bang segment for the switching-function sign check.
pub const PMP_SAMPLES: usize = 1000;
pub const PMP_SWITCH_TOL: f64 = 1e-6;
pub const HOLD_SLOPE_TOL: f64 = 1e-6;
pub const HOLD_VELOCITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("phase stalls under u = {u} on [{lo}, {hi}]")]
    Infeasible { lo: f64, hi: f64, u: f64 },
    #[error("level {alpha} is outside the PRC range on [{lo}, {hi}]")]
    NoSwitchAngle { alpha: f64, lo: f64, hi: f64 },
    #[error("no candidate word admits a charge-balanced solution")]
    NoFeasibleWord,
    #[error("singular controls of both signs are admissible, so the spike can be delayed without bound; a target spike time is required")]
    TargetRequired,
    #[error("target spike time {target} ms is below the reachable minimum {min_target} ms")]
    TargetInfeasible { target: f64, min_target: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Min,
    Max,
}

impl Objective {
    /// +1 for minimum time, -1 for maximum time.
    fn sigma(self) -> f64 {
        match self {
            Objective::Min => 1.0,
            Objective::Max => -1.0,
        }
    }
}

impl FromStr for Objective {
    type Err = SynthesisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" => Ok(Objective::Min),
            "max" => Ok(Objective::Max),
            _ => Err(SynthesisError::InvalidInput(format!("objective must be min or max, got {s:?}"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Min => "min",
            Objective::Max => "max",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bang {
    /// `u = -M`
    X,
    /// `u = +M`
    Y,
}

impl Bang {
    pub fn sign(self) -> f64 {
        match self {
            Bang::X => -1.0,
            Bang::Y => 1.0,
        }
    }

    pub fn from_sign(s: f64) -> Self {
        if s < 0.0 {
            Bang::X
        } else {
            Bang::Y
        }
    }

    fn flipped(self) -> Self {
        match self {
            Bang::X => Bang::Y,
            Bang::Y => Bang::X,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tag {
    Bang(Bang),
    Hold { theta_s: f64 },
}

/// Ordered segment tags, written as e.g. `XYX` or `Y-S-Y`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryWord(pub Vec<Tag>);

impl TrajectoryWord {
    pub fn from_bangs(bangs: &[Bang]) -> Self {
        TrajectoryWord(bangs.iter().map(|&b| Tag::Bang(b)).collect())
    }

    pub fn holds(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().filter_map(|t| match t {
            Tag::Hold { theta_s } => Some(*theta_s),
            Tag::Bang(_) => None,
        })
    }
}

impl fmt::Display for TrajectoryWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        for tag in &self.0 {
            match tag {
                Tag::Bang(Bang::X) => s.push('X'),
                Tag::Bang(Bang::Y) => s.push('Y'),
                Tag::Hold { .. } => s.push_str("-S-"),
            }
        }
        f.write_str(s.trim_matches('-'))
    }
}

impl FromStr for TrajectoryWord {
    type Err = SynthesisError;

    /// Hold locations are not part of the text form and come back as NaN.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.chars()
            .filter(|&c| c != '-')
            .map(|c| match c {
                'X' => Ok(Tag::Bang(Bang::X)),
                'Y' => Ok(Tag::Bang(Bang::Y)),
                'S' => Ok(Tag::Hold { theta_s: f64::NAN }),
                _ => Err(SynthesisError::InvalidInput(format!("bad word {s:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(TrajectoryWord)
    }
}

impl Serialize for TrajectoryWord {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TrajectoryWord {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularPoint {
    pub theta_s: f64,
    pub z: f64,
    /// `-ω / Z(θ_s)`
    pub u_s: f64,
    pub admissible: bool,
    /// Reachable by a single bang of the opposite sign without stalling.
    pub reachable: bool,
}

/// A bang-only word plus the monotone segment holding each switch.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateWord {
    pub word: TrajectoryWord,
    pub switch_segments: Vec<Interval>,
}

impl CandidateWord {
    fn bangs(&self) -> Vec<Bang> {
        self.word
            .0
            .iter()
            .filter_map(|t| match t {
                Tag::Bang(b) => Some(*b),
                Tag::Hold { .. } => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SegmentKind {
    Bang { lo: f64, hi: f64 },
    Hold { theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(flatten)]
    pub kind: SegmentKind,
    pub u: f64,
    pub duration: f64,
}

impl Segment {
    pub fn phase_span(&self) -> Option<Interval> {
        match self.kind {
            SegmentKind::Bang { lo, hi } => Some(Interval { lo, hi }),
            SegmentKind::Hold { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub segments: Vec<Segment>,
    pub total_time: f64,
}

impl ControlSchedule {
    pub fn charge(&self) -> f64 {
        self.segments.iter().map(|s| s.u * s.duration).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmpCheck {
    pub applicable: bool,
    pub passed: bool,
    pub worst_margin: f64,
}

impl PmpCheck {
    fn vacuous() -> Self {
        PmpCheck { applicable: false, passed: true, worst_margin: 0.0 }
    }
}

/// Maximum-principle diagnostics.
///
/// Margins: `sign_law` is the smallest correctly-signed switching-function
/// value, `switch_zero` the largest `|φ|` at a switch, `switch_direction` the
/// smallest correctly-signed `dZ/dθ` at a switch and `singular_holds` the
/// largest `|dZ/dθ|` at a hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmpReport {
    pub sign_law: PmpCheck,
    pub switch_zero: PmpCheck,
    pub switch_direction: PmpCheck,
    pub singular_holds: PmpCheck,
}

impl PmpReport {
    pub fn all_passed(&self) -> bool {
        [self.sign_law, self.switch_zero, self.switch_direction, self.singular_holds]
            .iter()
            .all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawResult")]
pub struct SynthesisResult {
    pub model: String,
    pub objective: Objective,
    #[serde(rename = "M")]
    pub m: f64,
    pub word: TrajectoryWord,
    pub switch_angles: Vec<f64>,
    pub alpha: f64,
    #[serde(rename = "predicted_T")]
    pub predicted_t: f64,
    pub charge_residual: f64,
    pub unbounded_delay: bool,
    pub schedule: ControlSchedule,
    pub pmp_report: PmpReport,
}

#[derive(Deserialize)]
struct RawResult {
    model: String,
    objective: Objective,
    #[serde(rename = "M")]
    m: f64,
    word: TrajectoryWord,
    switch_angles: Vec<f64>,
    alpha: f64,
    #[serde(rename = "predicted_T")]
    predicted_t: f64,
    charge_residual: f64,
    unbounded_delay: bool,
    schedule: ControlSchedule,
    pmp_report: PmpReport,
}

impl From<RawResult> for SynthesisResult {
    fn from(r: RawResult) -> Self {
        let mut word = r.word;
        let mut hold_thetas = r.schedule.segments.iter().filter_map(|s| match s.kind {
            SegmentKind::Hold { theta } => Some(theta),
            SegmentKind::Bang { .. } => None,
        });
        for tag in &mut word.0 {
            if let Tag::Hold { theta_s } = tag {
                *theta_s = hold_thetas.next().unwrap_or(f64::NAN);
            }
        }
        SynthesisResult {
            model: r.model,
            objective: r.objective,
            m: r.m,
            word,
            switch_angles: r.switch_angles,
            alpha: r.alpha,
            predicted_t: r.predicted_t,
            charge_residual: r.charge_residual,
            unbounded_delay: r.unbounded_delay,
            schedule: r.schedule,
            pmp_report: r.pmp_report,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    pub quad_tol: f64,
    pub alpha_tol: f64,
    pub alpha_grid: usize,
    pub structure_grid: usize,
    /// Spike time to realize when the delay is unbounded.
    pub target_time: Option<f64>,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            quad_tol: 1e-12,
            alpha_tol: 1e-14,
            alpha_grid: 512,
            structure_grid: crate::phase_model::DEFAULT_STRUCTURE_GRID,
            target_time: None,
        }
    }
}

fn check_bound(m: f64) -> Result<(), SynthesisError> {
    if m >= 0.0 && m.is_finite() {
        Ok(())
    } else {
        Err(SynthesisError::InvalidInput(format!("M must be finite and non-negative, got {m}")))
    }
}

fn min_field(model: &PhaseModel, st: &PrcStructure, lo: f64, hi: f64, u: f64) -> f64 {
    let (zmin, zmax) = st.range_on(model, lo, hi);
    model.omega + if u >= 0.0 { u * zmin } else { u * zmax }
}

/// Time to sweep `[lo, hi]` under constant `u`.
fn arc_duration(model: &PhaseModel, lo: f64, hi: f64, u: f64, tol: f64) -> Result<f64, SynthesisError> {
    if hi <= lo {
        return Ok(0.0);
    }
    if u == 0.0 {
        return Ok((hi - lo) / model.omega);
    }
    let q = integrate_adaptive(|t| 1.0 / model.velocity(t, u), Interval::new(lo, hi)?, tol)?;
    Ok(q.value)
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    lo: f64,
    hi: f64,
    u: f64,
    duration: f64,
}

fn bang_arcs(
    model: &PhaseModel,
    st: &PrcStructure,
    m: f64,
    cand: &CandidateWord,
    alpha: f64,
    tol: f64,
) -> Result<Vec<Arc>, SynthesisError> {
    let bangs = cand.bangs();
    if bangs.len() != cand.switch_segments.len() + 1 {
        return Err(SynthesisError::InvalidInput(format!(
            "word {} needs {} switch segments",
            cand.word,
            bangs.len().saturating_sub(1)
        )));
    }
    let mut bounds = vec![0.0];
    for seg in &cand.switch_segments {
        let theta = invert_prc(model, alpha, *seg)?.ok_or(SynthesisError::NoSwitchAngle {
            alpha,
            lo: seg.lo,
            hi: seg.hi,
        })?;
        if theta < *bounds.last().unwrap() {
            return Err(SynthesisError::InvalidInput("switch segments out of order".into()));
        }
        bounds.push(theta);
    }
    bounds.push(TAU);
    bounds
        .windows(2)
        .zip(&bangs)
        .map(|(w, b)| {
            let u = b.sign() * m;
            if w[1] > w[0] && min_field(model, st, w[0], w[1], u) <= FEASIBILITY_GUARD {
                return Err(SynthesisError::Infeasible { lo: w[0], hi: w[1], u });
            }
            Ok(Arc { lo: w[0], hi: w[1], u, duration: arc_duration(model, w[0], w[1], u, tol)? })
        })
        .collect()
}

/// Net charge of a bang word whose switches sit on `Z = alpha`.
pub fn charge_residual(model: &PhaseModel, m: f64, cand: &CandidateWord, alpha: f64) -> Result<f64, SynthesisError> {
    check_bound(m)?;
    let opts = SynthesisOptions::default();
    let st = analyze_structure(model, opts.structure_grid)?;
    let arcs = bang_arcs(model, &st, m, cand, alpha, opts.quad_tol)?;
    Ok(arcs.iter().map(|a| a.u * a.duration).sum())
}

/// Spike time of a bang word whose switches sit on `Z = alpha`.
pub fn predicted_time(model: &PhaseModel, m: f64, cand: &CandidateWord, alpha: f64) -> Result<f64, SynthesisError> {
    check_bound(m)?;
    let opts = SynthesisOptions::default();
    let st = analyze_structure(model, opts.structure_grid)?;
    let arcs = bang_arcs(model, &st, m, cand, alpha, opts.quad_tol)?;
    Ok(arcs.iter().map(|a| a.duration).sum())
}

pub fn singular_points(model: &PhaseModel, m: f64) -> Result<Vec<SingularPoint>, SynthesisError> {
    let st = analyze_structure(model, crate::phase_model::DEFAULT_STRUCTURE_GRID)?;
    Ok(singular_points_in(model, &st, m))
}

pub fn singular_points_in(model: &PhaseModel, st: &PrcStructure, m: f64) -> Vec<SingularPoint> {
    st.critical_points
        .iter()
        .filter(|&&t| model.z(t) != 0.0)
        .map(|&theta_s| {
            let z = model.z(theta_s);
            let u_s = -model.omega / z;
            let bang = z.signum() * m;
            SingularPoint {
                theta_s,
                z,
                u_s,
                admissible: u_s.abs() <= m,
                reachable: min_field(model, st, 0.0, TAU, bang) > FEASIBILITY_GUARD,
            }
        })
        .collect()
}

/// Bang-bang words compatible with the switching law, one per band of `α`
/// between consecutive critical values of `Z`. Each word places one switch on
/// every monotone segment that the level set crosses. Words with fewer than
/// two switches cannot be charge-balanced and are dropped.
pub fn candidate_words(model: &PhaseModel, st: &PrcStructure, objective: Objective) -> Vec<(CandidateWord, Interval)> {
    let mut levels = st.boundary_values(model);
    levels.sort_by(f64::total_cmp);
    levels.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut out = Vec::new();
    for w in levels.windows(2) {
        let Ok(band) = Interval::new(w[0], w[1]) else { continue };
        let mid = band.midpoint();
        let segs: Vec<Interval> = st
            .monotone_segments
            .iter()
            .filter(|s| (model.z(s.lo) - mid) * (model.z(s.hi) - mid) < 0.0)
            .copied()
            .collect();
        if segs.len() < 2 {
            continue;
        }
        let above = model.z(0.0) > mid;
        let mut b = if above == (objective == Objective::Min) { Bang::Y } else { Bang::X };
        let mut bangs = vec![b];
        for _ in &segs {
            b = b.flipped();
            bangs.push(b);
        }
        out.push((CandidateWord { word: TrajectoryWord::from_bangs(&bangs), switch_segments: segs }, band));
    }
    out
}

struct BangSolution {
    cand: CandidateWord,
    alpha: f64,
    arcs: Vec<Arc>,
    time: f64,
}

fn solve_candidate(
    model: &PhaseModel,
    st: &PrcStructure,
    m: f64,
    cand: &CandidateWord,
    band: Interval,
    opts: &SynthesisOptions,
) -> Vec<BangSolution> {
    let n = opts.alpha_grid.max(8);
    let residual = |alpha: f64| -> Option<f64> {
        let arcs = bang_arcs(model, st, m, cand, alpha, opts.quad_tol).ok()?;
        Some(arcs.iter().map(|a| a.u * a.duration).sum())
    };
    let grid: Vec<(f64, Option<f64>)> = (0..n)
        .map(|k| band.lo + band.width() * (k as f64 + 0.5) / n as f64)
        .map(|a| (a, residual(a)))
        .collect();
    let mut roots = Vec::new();
    for (k, w) in grid.windows(2).enumerate() {
        let ((a0, r0), (a1, r1)) = (w[0], w[1]);
        let (Some(r0), Some(r1)) = (r0, r1) else { continue };
        if r0 == 0.0 {
            roots.push(a0);
        } else if r0.signum() != r1.signum() {
            if r1 == 0.0 {
                if k + 2 == grid.len() {
                    roots.push(a1);
                }
                continue;
            }
            let f = |a: f64| residual(a).unwrap_or(f64::NAN);
            if let Ok(root) = find_root_bracketed(f, Interval { lo: a0, hi: a1 }, opts.alpha_tol) {
                roots.push(root);
            }
        }
    }
    roots
        .into_iter()
        .filter_map(|alpha| {
            let arcs = bang_arcs(model, st, m, cand, alpha, opts.quad_tol).ok()?;
            let time = arcs.iter().map(|a| a.duration).sum();
            Some(BangSolution { cand: cand.clone(), alpha, arcs, time })
        })
        .collect()
}

fn best_bang_bang(
    model: &PhaseModel,
    st: &PrcStructure,
    m: f64,
    objective: Objective,
    opts: &SynthesisOptions,
) -> Option<BangSolution> {
    candidate_words(model, st, objective)
        .par_iter()
        .flat_map_iter(|(cand, band)| solve_candidate(model, st, m, cand, *band, opts))
        .collect::<Vec<_>>()
        .into_iter()
        .reduce(|a, b| {
            let b_better = match objective {
                Objective::Min => b.time < a.time,
                Objective::Max => b.time > a.time,
            };
            if b_better {
                b
            } else {
                a
            }
        })
}

fn assemble(
    model: &PhaseModel,
    m: f64,
    objective: Objective,
    word: TrajectoryWord,
    alpha: f64,
    segments: Vec<Segment>,
    unbounded_delay: bool,
) -> SynthesisResult {
    let switch_angles = segments
        .windows(2)
        .filter_map(|w| match (w[0].kind, w[1].kind) {
            (SegmentKind::Bang { hi, .. }, SegmentKind::Bang { .. }) => Some(hi),
            _ => None,
        })
        .collect();
    let schedule = ControlSchedule { total_time: segments.iter().map(|s| s.duration).sum(), segments };
    let mut result = SynthesisResult {
        model: model.name.clone(),
        objective,
        m,
        word,
        switch_angles,
        alpha,
        predicted_t: schedule.total_time,
        charge_residual: schedule.charge(),
        unbounded_delay,
        schedule,
        pmp_report: PmpReport {
            sign_law: PmpCheck::vacuous(),
            switch_zero: PmpCheck::vacuous(),
            switch_direction: PmpCheck::vacuous(),
            singular_holds: PmpCheck::vacuous(),
        },
    };
    result.pmp_report = verify_pmp(model, m, &result);
    result
}

fn from_bang_solution(model: &PhaseModel, m: f64, objective: Objective, sol: BangSolution) -> SynthesisResult {
    let segments = sol
        .arcs
        .iter()
        .map(|a| Segment { kind: SegmentKind::Bang { lo: a.lo, hi: a.hi }, u: a.u, duration: a.duration })
        .collect();
    assemble(model, m, objective, sol.cand.word, sol.alpha, segments, false)
}

fn unforced(model: &PhaseModel, objective: Objective) -> SynthesisResult {
    let seg = Segment { kind: SegmentKind::Bang { lo: 0.0, hi: TAU }, u: 0.0, duration: model.natural_period() };
    assemble(model, 0.0, objective, TrajectoryWord::default(), 0.0, vec![seg], false)
}

pub fn min_time_synthesize(model: &PhaseModel, m: f64) -> Result<SynthesisResult, SynthesisError> {
    min_time_synthesize_with(model, m, &SynthesisOptions::default())
}

pub fn min_time_synthesize_with(
    model: &PhaseModel,
    m: f64,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult, SynthesisError> {
    check_bound(m)?;
    if m == 0.0 {
        return Ok(unforced(model, Objective::Min));
    }
    let st = analyze_structure(model, opts.structure_grid)?;
    let sol = best_bang_bang(model, &st, m, Objective::Min, opts).ok_or(SynthesisError::NoFeasibleWord)?;
    Ok(from_bang_solution(model, m, Objective::Min, sol))
}

pub fn max_time_synthesize(
    model: &PhaseModel,
    m: f64,
    target_time: Option<f64>,
) -> Result<SynthesisResult, SynthesisError> {
    let opts = SynthesisOptions { target_time, ..SynthesisOptions::default() };
    max_time_synthesize_with(model, m, &opts)
}

pub fn max_time_synthesize_with(
    model: &PhaseModel,
    m: f64,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult, SynthesisError> {
    check_bound(m)?;
    if m == 0.0 {
        return Ok(unforced(model, Objective::Max));
    }
    let st = analyze_structure(model, opts.structure_grid)?;
    let singular = singular_points_in(model, &st, m);
    let admissible: Vec<&SingularPoint> = singular.iter().filter(|s| s.admissible).collect();
    let has_pos = admissible.iter().any(|s| s.u_s > 0.0);
    let has_neg = admissible.iter().any(|s| s.u_s < 0.0);
    if has_pos && has_neg {
        let target = opts.target_time.ok_or(SynthesisError::TargetRequired)?;
        return unbounded_delay_schedule(model, &st, m, &admissible, target, opts);
    }

    let mut best = best_bang_bang(model, &st, m, Objective::Max, opts)
        .map(|sol| from_bang_solution(model, m, Objective::Max, sol));
    for sp in admissible.iter().filter(|s| s.reachable) {
        let r = bang_singular_bang(model, m, sp, opts)?;
        if best.as_ref().is_none_or(|b| r.predicted_t > b.predicted_t) {
            best = Some(r);
        }
    }
    best.ok_or(SynthesisError::NoFeasibleWord)
}

/// Bang into `θ_s`, hold at `u_s` until the charge balances, bang out.
fn bang_singular_bang(
    model: &PhaseModel,
    m: f64,
    sp: &SingularPoint,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult, SynthesisError> {
    let bang = Bang::from_sign(sp.z);
    let u = bang.sign() * m;
    let t1 = arc_duration(model, 0.0, sp.theta_s, u, opts.quad_tol)?;
    let t3 = arc_duration(model, sp.theta_s, TAU, u, opts.quad_tol)?;
    let t_hold = -u * (t1 + t3) / sp.u_s;
    let segments = vec![
        Segment { kind: SegmentKind::Bang { lo: 0.0, hi: sp.theta_s }, u, duration: t1 },
        Segment { kind: SegmentKind::Hold { theta: sp.theta_s }, u: sp.u_s, duration: t_hold },
        Segment { kind: SegmentKind::Bang { lo: sp.theta_s, hi: TAU }, u, duration: t3 },
    ];
    let word = TrajectoryWord(vec![Tag::Bang(bang), Tag::Hold { theta_s: sp.theta_s }, Tag::Bang(bang)]);
    Ok(assemble(model, m, Objective::Max, word, sp.z, segments, false))
}

/// Realizes a requested spike time when singular holds of both signs are
/// available. The bang arcs follow `u = M sign(Z)` (the fastest passage), and
/// the remaining time is split between the weakest positive and negative holds
/// so that the total charge vanishes.
fn unbounded_delay_schedule(
    model: &PhaseModel,
    st: &PrcStructure,
    m: f64,
    admissible: &[&SingularPoint],
    target: f64,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult, SynthesisError> {
    let weakest = |positive: bool| {
        admissible
            .iter()
            .filter(|s| (s.u_s > 0.0) == positive)
            .min_by(|a, b| a.u_s.abs().total_cmp(&b.u_s.abs()))
            .copied()
            .expect("both signs present")
    };
    let (pa, pb) = (weakest(true), weakest(false));

    let mut cuts: Vec<f64> = st.zeros.iter().copied().filter(|&z| z > 0.0 && z < TAU).collect();
    cuts.extend([pa.theta_s, pb.theta_s]);
    cuts.extend([0.0, TAU]);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut arcs = Vec::new();
    for w in cuts.windows(2) {
        let u = m * model.z(0.5 * (w[0] + w[1])).signum();
        arcs.push(Arc { lo: w[0], hi: w[1], u, duration: arc_duration(model, w[0], w[1], u, opts.quad_tol)? });
    }
    let q: f64 = arcs.iter().map(|a| a.u * a.duration).sum();
    let b: f64 = arcs.iter().map(|a| a.duration).sum();
    let (ua, ub) = (pa.u_s, pb.u_s);
    let min_target = b + if q > 0.0 { q / -ub } else { -q / ua };
    if !(target >= min_target) {
        return Err(SynthesisError::TargetInfeasible { target, min_target });
    }
    let d = target - b;
    let ta = ((-q - ub * d) / (ua - ub)).max(0.0);
    let tb = (d - ta).max(0.0);

    let mut segments: Vec<Segment> = Vec::new();
    let mut word: Vec<Tag> = Vec::new();
    for (i, a) in arcs.iter().enumerate() {
        if i > 0 {
            for (sp, t) in [(pa, ta), (pb, tb)] {
                if sp.theta_s == a.lo {
                    segments.push(Segment { kind: SegmentKind::Hold { theta: a.lo }, u: sp.u_s, duration: t });
                    word.push(Tag::Hold { theta_s: a.lo });
                }
            }
        }
        let bang = Bang::from_sign(a.u);
        if let Some(last) = segments.last_mut() {
            if let SegmentKind::Bang { hi, .. } = &mut last.kind {
                if last.u == a.u {
                    *hi = a.hi;
                    last.duration += a.duration;
                    continue;
                }
            }
        }
        segments.push(Segment { kind: SegmentKind::Bang { lo: a.lo, hi: a.hi }, u: a.u, duration: a.duration });
        word.push(Tag::Bang(bang));
    }
    Ok(assemble(model, m, Objective::Max, TrajectoryWord(word), 0.0, segments, true))
}

pub fn synthesize(
    model: &PhaseModel,
    m: f64,
    objective: Objective,
    opts: &SynthesisOptions,
) -> Result<SynthesisResult, SynthesisError> {
    match objective {
        Objective::Min => min_time_synthesize_with(model, m, opts),
        Objective::Max => max_time_synthesize_with(model, m, opts),
    }
}

/// Switching function `φ = λ₁Z + λ₂` with `λ₂ = α/ω` and `λ₁` from `H = 0`.
pub fn switching_function(model: &PhaseModel, alpha: f64, theta: f64, u: f64) -> f64 {
    let lambda2 = alpha / model.omega;
    let lambda1 = -(1.0 + lambda2 * u) / model.velocity(theta, u);
    lambda1 * model.z(theta) + lambda2
}

pub fn verify_pmp(model: &PhaseModel, m: f64, result: &SynthesisResult) -> PmpReport {
    let sigma = result.objective.sigma();
    let alpha = result.alpha;
    let segs = &result.schedule.segments;

    let mut sign_law = PmpCheck::vacuous();
    if !result.unbounded_delay && m > 0.0 {
        let mut worst = f64::INFINITY;
        for s in segs {
            if let SegmentKind::Bang { lo, hi } = s.kind {
                for k in 0..PMP_SAMPLES {
                    let theta = lo + (hi - lo) * (k as f64 + 0.5) / PMP_SAMPLES as f64;
                    // Minimum time wants φ < 0 under u = +M.
                    let margin = -sigma * s.u.signum() * switching_function(model, alpha, theta, s.u);
                    worst = worst.min(margin);
                }
            }
        }
        if worst.is_finite() {
            sign_law = PmpCheck { applicable: true, passed: worst > -1e-12, worst_margin: worst };
        }
    }

    let switches: Vec<(f64, f64, f64)> = segs
        .windows(2)
        .filter_map(|w| match (w[0].kind, w[1].kind) {
            (SegmentKind::Bang { hi, .. }, SegmentKind::Bang { .. }) => Some((hi, w[0].u, w[1].u)),
            _ => None,
        })
        .collect();
    let mut switch_zero = PmpCheck::vacuous();
    let mut switch_direction = PmpCheck::vacuous();
    if !switches.is_empty() {
        let worst_phi = switches
            .iter()
            .map(|&(t, u, _)| switching_function(model, alpha, t, u).abs())
            .fold(0.0, f64::max);
        switch_zero = PmpCheck { applicable: true, passed: worst_phi <= PMP_SWITCH_TOL, worst_margin: worst_phi };
        if !result.unbounded_delay {
            // X→Y needs dZ/dθ > 0 for minimum time; Y→X needs dZ/dθ < 0.
            let worst_dir = switches
                .iter()
                .map(|&(t, u0, u1)| sigma * (u1 - u0).signum() * model.dz(t))
                .fold(f64::INFINITY, f64::min);
            switch_direction = PmpCheck { applicable: true, passed: worst_dir > 0.0, worst_margin: worst_dir };
        }
    }

    let mut singular_holds = PmpCheck::vacuous();
    let holds: Vec<&Segment> = segs.iter().filter(|s| matches!(s.kind, SegmentKind::Hold { .. })).collect();
    if !holds.is_empty() {
        let mut worst = 0.0f64;
        let mut passed = true;
        for s in holds {
            let SegmentKind::Hold { theta } = s.kind else { unreachable!() };
            let slope = model.dz(theta).abs();
            worst = worst.max(slope);
            passed &= slope <= HOLD_SLOPE_TOL && model.velocity(theta, s.u).abs() <= HOLD_VELOCITY_TOL;
        }
        singular_holds = PmpCheck { applicable: true, passed, worst_margin: worst };
    }

    PmpReport { sign_law, switch_zero, switch_direction, singular_holds }
}
