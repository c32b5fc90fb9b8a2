//! Four-dimensional Hodgkin-Huxley model used to check phase-model controls.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmt_sig12;
use crate::numerics::{find_root_bracketed, integrate_ode_with, Interval, NumericsError, OdeEvent, OdeOptions, OdeTrajectory};
use crate::schedule_sim::TimeDomainControl;

/// Default ODE tolerance for state-space runs.
pub const HH_ODE_TOL: f64 = 1e-9;
/// Search range for the baseline current, µA/cm².
pub const BASELINE_RANGE: (f64, f64) = (5.0, 20.0);
/// Events are ignored this long after a cycle starts, ms.
const REFRACTORY_GUARD: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HhError {
    #[error("no periodic firing matches the target over I_b in [{lo}, {hi}]")]
    NotOscillatory { lo: f64, hi: f64 },
    #[error("no spike within {t_max} ms")]
    NoSpike { t_max: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HHParams {
    /// µF/cm²
    pub c: f64,
    /// mS/cm²
    pub g_na: f64,
    pub g_k: f64,
    pub g_l: f64,
    /// mV
    pub e_na: f64,
    pub e_k: f64,
    pub e_l: f64,
    /// Baseline current, µA/cm².
    pub i_b: f64,
}

impl Default for HHParams {
    /// Squid-axon constants with an uncalibrated `I_b = 10`.
    fn default() -> Self {
        HHParams { c: 1.0, g_na: 120.0, g_k: 36.0, g_l: 0.3, e_na: 50.0, e_k: -77.0, e_l: -54.4, i_b: 10.0 }
    }
}

impl HHParams {
    pub fn validate(&self) -> Result<(), HhError> {
        let ok = [self.c, self.g_na, self.g_k, self.g_l].iter().all(|&x| x > 0.0 && x.is_finite())
            && [self.e_na, self.e_k, self.e_l, self.i_b].iter().all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(HhError::Invalid(format!("bad parameters {self:?}")))
        }
    }

    pub fn with_baseline(self, i_b: f64) -> Self {
        HHParams { i_b, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HHState {
    /// mV
    pub v: f64,
    pub m: f64,
    pub h: f64,
    pub n: f64,
}

impl HHState {
    pub fn to_array(self) -> [f64; 4] {
        [self.v, self.m, self.h, self.n]
    }

    /// Gating variables are clamped to `[0, 1]`.
    pub fn from_array(y: [f64; 4]) -> Self {
        HHState { v: y[0], m: y[1].clamp(0.0, 1.0), h: y[2].clamp(0.0, 1.0), n: y[3].clamp(0.0, 1.0) }
    }

    /// Gates at their steady-state values for voltage `v`.
    pub fn resting(v: f64) -> Self {
        let r = Rates::at(v);
        HHState { v, m: r.am / (r.am + r.bm), h: r.ah / (r.ah + r.bh), n: r.an / (r.an + r.bn) }
    }
}

/// Opening and closing rates, 1/ms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub am: f64,
    pub bm: f64,
    pub ah: f64,
    pub bh: f64,
    pub an: f64,
    pub bn: f64,
}

/// `x / (1 - e^{-x})`, with the series value where the denominator vanishes.
fn exprel(x: f64) -> f64 {
    let den = 1.0 - (-x).exp();
    if den.abs() < 1e-7 {
        1.0 + 0.5 * x
    } else {
        x / den
    }
}

impl Rates {
    pub fn at(v: f64) -> Self {
        Rates {
            am: exprel((v + 40.0) / 10.0),
            bm: 4.0 * (-(v + 65.0) / 18.0).exp(),
            ah: 0.07 * (-(v + 65.0) / 20.0).exp(),
            bh: 1.0 / (1.0 + (-(v + 35.0) / 10.0).exp()),
            an: 0.1 * exprel((v + 55.0) / 10.0),
            bn: 0.125 * (-(v + 65.0) / 80.0).exp(),
        }
    }
}

/// Right-hand side with applied current `I_b + u`.
pub fn hh_field(params: &HHParams, state: &HHState, u: f64) -> [f64; 4] {
    let HHState { v, m, h, n } = HHState::from_array(state.to_array());
    let r = Rates::at(v);
    let i_ion = params.g_na * m.powi(3) * h * (v - params.e_na)
        + params.g_k * n.powi(4) * (v - params.e_k)
        + params.g_l * (v - params.e_l);
    [
        (params.i_b + u - i_ion) / params.c,
        r.am * (1.0 - m) - r.bm * m,
        r.ah * (1.0 - h) - r.bh * h,
        r.an * (1.0 - n) - r.bn * n,
    ]
}

fn field_array(params: &HHParams, y: &[f64; 4], u: f64) -> [f64; 4] {
    hh_field(params, &HHState::from_array(*y), u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    pub spike_times: Vec<f64>,
    pub inter_spike_intervals: Vec<f64>,
}

impl SpikeTrain {
    pub fn new(spike_times: Vec<f64>) -> Self {
        let inter_spike_intervals = spike_times.windows(2).map(|w| w[1] - w[0]).collect();
        SpikeTrain { spike_times, inter_spike_intervals }
    }
}

/// Cubic through four samples, evaluated at `t`.
fn lagrange4(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    (0..4)
        .map(|i| {
            let w: f64 = (0..4).filter(|&j| j != i).map(|j| (t - ts[j]) / (ts[i] - ts[j])).product();
            vs[i] * w
        })
        .sum()
}

/// Upward crossings of `V = 0`, each refined on a local cubic through the
/// neighbouring samples (linear at the trajectory ends).
pub fn detect_spikes(trajectory: &OdeTrajectory<4>) -> SpikeTrain {
    let ts = &trajectory.times;
    let vs: Vec<f64> = trajectory.states.iter().map(|s| s[0]).collect();
    let mut spikes = Vec::new();
    for i in 0..vs.len().saturating_sub(1) {
        if !(vs[i] < 0.0 && vs[i + 1] >= 0.0) {
            continue;
        }
        let linear = ts[i] + (ts[i + 1] - ts[i]) * (-vs[i]) / (vs[i + 1] - vs[i]);
        let t = if i >= 1 && i + 2 < vs.len() {
            let (tw, vw) = (&ts[i - 1..i + 3], &vs[i - 1..i + 3]);
            find_root_bracketed(|t| lagrange4(tw, vw, t), Interval { lo: ts[i], hi: ts[i + 1] }, 1e-9)
                .unwrap_or(linear)
        } else {
            linear
        };
        spikes.push(t);
    }
    SpikeTrain::new(spikes)
}

/// Unforced periodic orbit, anchored at its voltage peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCycle {
    pub period: f64,
    pub peak_state: HHState,
    /// Time from the upward 0 mV crossing to the following peak.
    pub crossing_to_peak: f64,
    /// State at the upward 0 mV crossing.
    pub crossing_state: HHState,
}

const CROSS: &str = "cross";
const PEAK: &str = "peak";

/// Runs from `y0` at `t0` under `u(t)` until the first event named `stop`
/// after the refractory guard, or `t0 + horizon`.
fn run_until(
    params: &HHParams,
    y0: [f64; 4],
    t0: f64,
    horizon: f64,
    control: Option<&TimeDomainControl>,
    stop: &str,
    tol: f64,
) -> Result<OdeTrajectory<4>, HhError> {
    let u_at = |t: f64| control.map_or(0.0, |c| c.u_at(t - t0));
    let cross = |t: f64, y: &[f64; 4]| if stop == CROSS && t - t0 < REFRACTORY_GUARD { -1.0 } else { y[0] };
    let peak = |t: f64, y: &[f64; 4]| {
        if t - t0 < REFRACTORY_GUARD || y[0] <= 0.0 {
            -1.0
        } else {
            -field_array(params, y, u_at(t))[0]
        }
    };
    let events = [OdeEvent::new(CROSS, &cross, stop == CROSS), OdeEvent::new(PEAK, &peak, stop == PEAK)];

    // Piece boundaries of the stimulus, then free running.
    let mut cuts = vec![t0];
    if let Some(c) = control {
        cuts.extend(c.pieces.iter().map(|p| t0 + p.t_end).filter(|&t| t < t0 + horizon));
    }
    cuts.push(t0 + horizon);
    let opts = OdeOptions::new(tol).with_max_step(0.5);
    let mut traj = OdeTrajectory { times: vec![t0], states: vec![y0], events: Vec::new() };
    for w in cuts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let u = u_at(0.5 * (w[0] + w[1]));
        let seg = integrate_ode_with(
            |_, y: &[f64; 4]| field_array(params, y, u),
            traj.last_state(),
            Interval::new(w[0], w[1])?,
            &opts,
            &events,
        )?;
        traj.extend(seg);
        if traj.stopped_by(stop).is_some() {
            break;
        }
    }
    Ok(traj)
}

/// Settles onto the unforced orbit and measures it.
pub fn limit_cycle(params: &HHParams, tol: f64) -> Result<LimitCycle, HhError> {
    params.validate()?;
    let not_osc = HhError::NotOscillatory { lo: params.i_b, hi: params.i_b };
    // Transient from rest; a silent neuron never reaches a peak.
    let warm = run_until(params, HHState::resting(-65.0).to_array(), 0.0, 150.0, None, "none", tol)?;
    let crossings: Vec<f64> = warm.events.iter().filter(|e| e.0 > 20.0 && e.1 == CROSS).map(|e| e.0).collect();
    if crossings.len() < 3 {
        return Err(not_osc);
    }
    let mut y = warm.last_state();
    let mut t = warm.last_time();
    let mut last_peak: Option<f64> = None;
    let mut prev_period = f64::NAN;
    for _ in 0..60 {
        let traj = run_until(params, y, t, 100.0, None, PEAK, tol)?;
        let Some(tp) = traj.stopped_by(PEAK) else { return Err(not_osc) };
        let tc = traj.events.iter().rev().find(|e| e.1 == CROSS).map(|e| e.0);
        y = traj.last_state();
        t = tp;
        if let (Some(prev), Some(tc)) = (last_peak, tc) {
            let period = tp - prev;
            if (period - prev_period).abs() < 1e-7 {
                let crossing_state = next_crossing_state(params, y, tol)?;
                return Ok(LimitCycle {
                    period,
                    peak_state: HHState::from_array(y),
                    crossing_to_peak: tp - tc,
                    crossing_state,
                });
            }
            prev_period = period;
        }
        last_peak = Some(tp);
    }
    Err(not_osc)
}

/// State at the next upward crossing after a peak on the orbit.
fn next_crossing_state(params: &HHParams, peak: [f64; 4], tol: f64) -> Result<HHState, HhError> {
    let traj = run_until(params, peak, 0.0, 100.0, None, CROSS, tol)?;
    if traj.stopped_by(CROSS).is_none() {
        return Err(HhError::NoSpike { t_max: 100.0 });
    }
    Ok(HHState::from_array(traj.last_state()))
}

/// Unforced firing period at the given baseline, or `None` if silent.
pub fn baseline_period(params: &HHParams, tol: f64) -> Option<f64> {
    limit_cycle(params, tol).ok().map(|lc| lc.period)
}

/// Baseline current whose unforced period equals `target_period`.
pub fn calibrate_baseline(params: &HHParams, target_period: f64) -> Result<f64, HhError> {
    let (lo, hi) = BASELINE_RANGE;
    let not_osc = HhError::NotOscillatory { lo, hi };
    if !(target_period > 0.0 && target_period.is_finite()) {
        return Err(not_osc);
    }
    let n = 7;
    let grid: Vec<(f64, Option<f64>)> = (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .map(|i_b| (i_b, baseline_period(&params.with_baseline(i_b), HH_ODE_TOL)))
        .collect();
    for w in grid.windows(2) {
        let ((i0, Some(p0)), (i1, Some(p1))) = (w[0], w[1]) else { continue };
        if (p0 - target_period) * (p1 - target_period) <= 0.0 {
            let f = |i_b: f64| {
                baseline_period(&params.with_baseline(i_b), HH_ODE_TOL).map_or(f64::NAN, |p| p - target_period)
            };
            return Ok(find_root_bracketed(f, Interval::new(i0, i1)?, 1e-6)?);
        }
    }
    Err(not_osc)
}

/// Where each stimulus cycle starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Anchor {
    /// Voltage maximum of the spike.
    #[default]
    Peak,
    /// Upward 0 mV crossing.
    Crossing,
}

/// Stimulated run: the train plus the sampled trajectory and stimulus.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledRun {
    pub train: SpikeTrain,
    pub trajectory: OdeTrajectory<4>,
    pub u: Vec<f64>,
}

impl ControlledRun {
    /// `t,V,m,h,n,u` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,V,m,h,n,u\n");
        for ((t, y), u) in self.trajectory.times.iter().zip(&self.trajectory.states).zip(&self.u) {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                fmt_sig12(*t),
                fmt_sig12(y[0]),
                fmt_sig12(y[1]),
                fmt_sig12(y[2]),
                fmt_sig12(y[3]),
                fmt_sig12(*u)
            );
        }
        s
    }
}

/// Applies `control` for `n_cycles` cycles starting on the calibrated orbit.
pub fn apply_control(params: &HHParams, control: &TimeDomainControl, n_cycles: usize) -> Result<SpikeTrain, HhError> {
    let lc = limit_cycle(params, HH_ODE_TOL)?;
    Ok(apply_control_from(params, &lc, control, n_cycles, Anchor::Peak, HH_ODE_TOL)?.train)
}

/// Re-triggers `control` at the anchor of every cycle.
///
/// Time zero is the upward crossing of the spike the run starts on, so the
/// first spike time is `0`. Each cycle runs until the next anchor; failing to
/// reach it within ten control durations is `NoSpike`.
pub fn apply_control_from(
    params: &HHParams,
    lc: &LimitCycle,
    control: &TimeDomainControl,
    n_cycles: usize,
    anchor: Anchor,
    tol: f64,
) -> Result<ControlledRun, HhError> {
    if n_cycles == 0 {
        return Err(HhError::Invalid("n_cycles must be at least 1".into()));
    }
    control.validate().map_err(|e| HhError::Invalid(e.to_string()))?;
    let (mut y, mut t0, stop) = match anchor {
        Anchor::Peak => (lc.peak_state.to_array(), lc.crossing_to_peak, PEAK),
        Anchor::Crossing => (lc.crossing_state.to_array(), 0.0, CROSS),
    };
    let horizon = 10.0 * control.total_duration.max(lc.period);
    let mut spikes = vec![0.0];
    let mut all = OdeTrajectory { times: vec![t0], states: vec![y], events: Vec::new() };
    let mut us = vec![control.u_at(0.0)];
    for _ in 0..n_cycles {
        let traj = run_until(params, y, t0, horizon, Some(control), stop, tol)?;
        let Some(t_end) = traj.stopped_by(stop) else { return Err(HhError::NoSpike { t_max: horizon }) };
        let t_spike = traj
            .events
            .iter()
            .find(|e| e.1 == CROSS && e.0 > t0)
            .map(|e| e.0)
            .ok_or(HhError::NoSpike { t_max: horizon })?;
        spikes.push(t_spike);
        us.extend(traj.times.iter().skip(1).map(|&t| control.u_at(t - t0)));
        y = traj.last_state();
        t0 = t_end;
        all.extend(traj);
    }
    Ok(ControlledRun { train: SpikeTrain::new(spikes), trajectory: all, u: us })
}

/// Absolute gap between a phase-model spike time and an observed interval.
pub fn spike_time_error(phase_t: f64, observed_isi: f64) -> f64 {
    (observed_isi - phase_t).abs()
}
