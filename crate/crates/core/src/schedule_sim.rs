//! Time-domain stimuli and forward simulation of the controlled phase model.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmt_sig12;
use crate::numerics::{integrate_adaptive, integrate_ode_with, Interval, NumericsError, OdeEvent, OdeOptions, OdeTrajectory};
use crate::phase_model::{analyze_structure, ModelError, PhaseModel};
use crate::synthesis::{ControlSchedule, SegmentKind, FEASIBILITY_GUARD};

/// Quadrature tolerance for bang-segment durations.
const DURATION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("phase stalls under u = {u} on [{lo}, {hi}]")]
    Infeasible { lo: f64, hi: f64, u: f64 },
    #[error("no spike within {t_max} ms")]
    NoSpike { t_max: f64 },
    #[error("invalid control: {0}")]
    InvalidControl(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPiece {
    pub t_start: f64,
    pub t_end: f64,
    pub u: f64,
    /// Phase at which a singular hold pins the oscillator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold_theta: Option<f64>,
}

/// Piecewise-constant stimulus starting at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeDomainControl {
    pub pieces: Vec<ControlPiece>,
    pub total_duration: f64,
}

impl TimeDomainControl {
    /// Zero stimulus of the given length.
    pub fn zero(duration: f64) -> Self {
        TimeDomainControl {
            pieces: vec![ControlPiece { t_start: 0.0, t_end: duration, u: 0.0, hold_theta: None }],
            total_duration: duration,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut t = 0.0;
        for p in &self.pieces {
            if !(p.t_start == t && p.t_end > p.t_start && p.u.is_finite()) {
                return Err(SimError::InvalidControl(format!("piece {p:?} does not continue from t = {t}")));
            }
            t = p.t_end;
        }
        if (t - self.total_duration).abs() > 1e-9 * t.max(1.0) {
            return Err(SimError::InvalidControl("pieces do not sum to the total duration".into()));
        }
        Ok(())
    }

    /// Times at which `u` changes, including `0` and the end.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        out.extend(self.pieces.iter().map(|p| p.t_end));
        out
    }

    pub fn values(&self) -> Vec<f64> {
        self.pieces.iter().map(|p| p.u).collect()
    }

    /// Stimulus at time `t`; zero outside `[0, total_duration)`.
    pub fn u_at(&self, t: f64) -> f64 {
        self.pieces
            .iter()
            .find(|p| p.t_start <= t && t < p.t_end)
            .map_or(0.0, |p| p.u)
    }

    pub fn charge(&self) -> f64 {
        self.pieces.iter().map(|p| p.u * (p.t_end - p.t_start)).sum()
    }

    /// `t_start,t_end,u` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t_start,t_end,u\n");
        for p in &self.pieces {
            let _ = writeln!(s, "{},{},{}", fmt_sig12(p.t_start), fmt_sig12(p.t_end), fmt_sig12(p.u));
        }
        s
    }
}

/// Converts a phase-domain schedule to a stimulus in time.
///
/// Bang durations are recomputed from `∫ dθ / (ω + uZ)`; holds keep their
/// stored durations. Zero-length pieces are dropped.
pub fn to_time_domain(model: &PhaseModel, schedule: &ControlSchedule) -> Result<TimeDomainControl, SimError> {
    let st = analyze_structure(model, crate::phase_model::DEFAULT_STRUCTURE_GRID)?;
    let mut pieces = Vec::new();
    let mut t = 0.0;
    for seg in &schedule.segments {
        let (duration, hold_theta) = match seg.kind {
            SegmentKind::Bang { lo, hi } => {
                if hi <= lo {
                    continue;
                }
                let (zmin, zmax) = st.range_on(model, lo, hi);
                let floor = model.omega + if seg.u >= 0.0 { seg.u * zmin } else { seg.u * zmax };
                if floor <= FEASIBILITY_GUARD {
                    return Err(SimError::Infeasible { lo, hi, u: seg.u });
                }
                let q = integrate_adaptive(|x| 1.0 / model.velocity(x, seg.u), Interval::new(lo, hi)?, DURATION_TOL)?;
                (q.value, None)
            }
            SegmentKind::Hold { theta } => (seg.duration, Some(theta)),
        };
        if duration <= 0.0 {
            continue;
        }
        pieces.push(ControlPiece { t_start: t, t_end: t + duration, u: seg.u, hold_theta });
        t += duration;
    }
    Ok(TimeDomainControl { pieces, total_duration: t })
}

/// Forward run of `(θ, p)` with `θ' = ω + Z(θ)u`, `p' = u`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseRun {
    pub trajectory: OdeTrajectory<2>,
    pub spike_time: f64,
    pub final_charge: f64,
}

impl PhaseRun {
    /// `t,theta,p` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,theta,p\n");
        for (t, y) in self.trajectory.times.iter().zip(&self.trajectory.states) {
            let _ = writeln!(s, "{},{},{}", fmt_sig12(*t), fmt_sig12(y[0]), fmt_sig12(y[1]));
        }
        s
    }
}

const SPIKE: &str = "spike";

/// Integrates the controlled phase model from `θ = 0` until `θ = 2π`.
///
/// Holds pin `θ` at their stored phase. After the stimulus ends the
/// oscillator runs free; no spike within `10·T₀` is an error.
pub fn simulate_phase(model: &PhaseModel, control: &TimeDomainControl, tol: f64) -> Result<PhaseRun, SimError> {
    control.validate()?;
    let t_max = 10.0 * model.natural_period();
    let spike_fn = |_: f64, y: &[f64; 2]| y[0] - TAU;
    let events = [OdeEvent::new(SPIKE, &spike_fn, true)];
    let opts = OdeOptions::new(tol);

    let mut traj = OdeTrajectory { times: vec![0.0], states: vec![[0.0, 0.0]], events: Vec::new() };
    let mut pieces: Vec<ControlPiece> = control.pieces.clone();
    let tail_start = control.total_duration;
    if tail_start < t_max {
        pieces.push(ControlPiece { t_start: tail_start, t_end: t_max, u: 0.0, hold_theta: None });
    }
    for piece in pieces {
        let y = traj.last_state();
        if let Some(theta) = piece.hold_theta {
            let p = y[1] + piece.u * (piece.t_end - piece.t_start);
            traj.times.push(piece.t_end);
            traj.states.push([theta, p]);
            continue;
        }
        let u = piece.u;
        let seg = integrate_ode_with(
            |_, y: &[f64; 2]| [model.velocity(y[0], u), u],
            y,
            Interval::new(piece.t_start, piece.t_end)?,
            &opts,
            &events,
        )?;
        traj.extend(seg);
        if let Some(spike_time) = traj.stopped_by(SPIKE) {
            let final_charge = traj.last_state()[1];
            return Ok(PhaseRun { trajectory: traj, spike_time, final_charge });
        }
    }
    Err(SimError::NoSpike { t_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::{max_time_synthesize, min_time_synthesize};

    #[test]
    fn unforced_hh_spike() {
        let m = PhaseModel::hodgkin_huxley();
        let run = simulate_phase(&m, &TimeDomainControl::zero(1.0), 1e-10).unwrap();
        assert!((run.spike_time - TAU / 0.43).abs() < 1e-5 * TAU / 0.43);
        assert!((run.spike_time - 14.61).abs() < 0.02);
    }

    #[test]
    fn degenerate_schedule_is_one_zero_piece() {
        let m = PhaseModel::morris_lecar();
        let r = min_time_synthesize(&m, 0.0).unwrap();
        let c = to_time_domain(&m, &r.schedule).unwrap();
        assert_eq!(c.pieces.len(), 1);
        assert_eq!(c.pieces[0].u, 0.0);
        assert!((c.total_duration - m.natural_period()).abs() < 1e-12);
    }

    #[test]
    fn sniper_singular_breakpoints() {
        let m = PhaseModel::sniper(1.0, 1.0).unwrap();
        let r = max_time_synthesize(&m, 0.7, None).unwrap();
        let c = to_time_domain(&m, &r.schedule).unwrap();
        let b = c.breakpoints();
        let t1 = b[1];
        assert!((b[2] - b[1] - 4.0 * 0.7 * t1).abs() < 1e-9);
        assert!((c.total_duration - r.predicted_t).abs() < 1e-8);
        let run = simulate_phase(&m, &c, 1e-10).unwrap();
        assert!((run.spike_time - (2.0 * t1 + 4.0 * 0.7 * t1)).abs() < 1e-5);
        assert!(run.final_charge.abs() < 1e-6);
    }

    #[test]
    fn hh_min_durations_match_segment_quadrature() {
        let m = PhaseModel::hodgkin_huxley();
        let r = min_time_synthesize(&m, 0.7).unwrap();
        let c = to_time_domain(&m, &r.schedule).unwrap();
        for (piece, seg) in c.pieces.iter().zip(&r.schedule.segments) {
            let SegmentKind::Bang { lo, hi } = seg.kind else { panic!() };
            // Composite Simpson oracle for the arc duration.
            let n = 100_000;
            let h = (hi - lo) / n as f64;
            let f = |t: f64| 1.0 / m.velocity(t, seg.u);
            let mut s = f(lo) + f(hi);
            for i in 1..n {
                s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            assert!((piece.t_end - piece.t_start - s * h / 3.0).abs() < 1e-8);
        }
    }

    #[test]
    fn sniper_min_simulation_closes_loop() {
        let m = PhaseModel::sniper(1.0, 1.0).unwrap();
        let r = min_time_synthesize(&m, 0.7).unwrap();
        let c = to_time_domain(&m, &r.schedule).unwrap();
        let run = simulate_phase(&m, &c, 1e-10).unwrap();
        assert!((run.spike_time - r.predicted_t).abs() < 1e-5);
        assert!(run.final_charge.abs() < 1e-6);
        assert!(run.trajectory.states.windows(2).all(|w| w[1][0] >= w[0][0] - 1e-12));
        assert!(run.to_csv().starts_with("t,theta,p\n0,0,0\n"));
    }

    #[test]
    fn stalled_phase_reports_no_spike() {
        let m = PhaseModel::sniper(1.0, 1.0).unwrap();
        // A hold longer than 10·T₀ never lets the phase reach 2π.
        let c = TimeDomainControl {
            pieces: vec![ControlPiece { t_start: 0.0, t_end: 100.0, u: -0.5, hold_theta: Some(0.0) }],
            total_duration: 100.0,
        };
        assert!(matches!(simulate_phase(&m, &c, 1e-8), Err(SimError::NoSpike { .. })));
        let bad = TimeDomainControl { pieces: vec![], total_duration: 1.0 };
        assert!(simulate_phase(&m, &bad, 1e-8).is_err());
    }

    #[test]
    fn csv_and_json() {
        let c = TimeDomainControl::zero(2.5);
        assert_eq!(c.to_csv(), "t_start,t_end,u\n0,2.5,0\n");
        let back: TimeDomainControl = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
