//! Numerical kernels shared by the rest of the crate.
//!
//! * [`integrate_adaptive`]: globally adaptive Gauss-Kronrod (7/15) quadrature.
//! * [`find_root_bracketed`]: Brent's method (bisection-safeguarded secant and
//!   inverse quadratic interpolation).
//! * [`integrate_ode`]: Dormand-Prince 5(4) with adaptive steps and upward
//!   zero-crossing event location.
//!
//! All functions are pure; nothing here holds shared state.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_QUAD_TOL: f64 = 1e-10;
pub const DEFAULT_ROOT_TOL: f64 = 1e-10;
pub const DEFAULT_ODE_TOL: f64 = 1e-8;
/// Time resolution of event location (ms).
pub const EVENT_TIME_TOL: f64 = 1e-9;
/// Function-evaluation budget for a single quadrature or root call.
pub const MAX_EVALUATIONS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("non-finite value encountered at {at}")]
    NonFinite { at: f64 },
    #[error("no convergence after {evaluations} evaluations")]
    NoConvergence { evaluations: usize },
    #[error("no sign change on bracket: f(lo) = {f_lo}, f(hi) = {f_hi}")]
    NoSignChange { f_lo: f64, f_hi: f64 },
    #[error("step size underflow at t = {t} (h = {h})")]
    StepUnderflow { t: f64, h: f64 },
}

/// Closed interval `[lo, hi]` with `lo < hi`, both finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, NumericsError> {
        let iv = Interval { lo, hi };
        iv.validate()?;
        Ok(iv)
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        if self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi {
            Ok(())
        } else {
            Err(NumericsError::InvalidInterval { lo: self.lo, hi: self.hi })
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

fn check_tol(tol: f64) -> Result<(), NumericsError> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(NumericsError::InvalidTolerance(tol))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub err_estimate: f64,
    pub evaluations: usize,
}

// Kronrod abscissae (descending), Kronrod weights and the embedded 7-point
// Gauss weights (attached to the odd-indexed Kronrod nodes).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

struct Piece {
    lo: f64,
    hi: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.err.total_cmp(&other.err) == Ordering::Equal
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn gauss_kronrod<F: FnMut(f64) -> f64>(f: &mut F, lo: f64, hi: f64) -> Result<Piece, NumericsError> {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let eval = |f: &mut F, x: f64| {
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(NumericsError::NonFinite { at: x })
        }
    };
    let fc = eval(f, center)?;
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = eval(f, center - dx)? + eval(f, center + dx)?;
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Ok(Piece {
        lo,
        hi,
        value: kronrod * half,
        err: ((kronrod - gauss) * half).abs(),
    })
}

/// Integrates `f` over `iv` to absolute tolerance `tol`.
///
/// The interval with the largest error estimate is bisected until the summed
/// estimate drops below `tol`.
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    iv: Interval,
    tol: f64,
) -> Result<QuadResult, NumericsError> {
    iv.validate()?;
    check_tol(tol)?;
    let mut heap = BinaryHeap::new();
    let first = gauss_kronrod(&mut f, iv.lo, iv.hi)?;
    let mut evaluations = 15;
    let mut total = first.value;
    let mut err = first.err;
    heap.push(first);
    while err > tol {
        if evaluations + 30 > MAX_EVALUATIONS {
            return Err(NumericsError::NoConvergence { evaluations });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            return Err(NumericsError::NoConvergence { evaluations });
        }
        let left = gauss_kronrod(&mut f, worst.lo, mid)?;
        let right = gauss_kronrod(&mut f, mid, worst.hi)?;
        evaluations += 30;
        total += left.value + right.value - worst.value;
        err += left.err + right.err - worst.err;
        heap.push(left);
        heap.push(right);
        // Re-sum occasionally so that cancellation in the running totals
        // cannot stall termination.
        if heap.len() % 64 == 0 {
            total = heap.iter().map(|p| p.value).sum();
            err = heap.iter().map(|p| p.err).sum();
        }
    }
    let value: f64 = heap.iter().map(|p| p.value).sum();
    let err_estimate: f64 = heap.iter().map(|p| p.err).sum();
    debug_assert!((value - total).abs() <= 1e-6 * (1.0 + value.abs()));
    Ok(QuadResult { value, err_estimate, evaluations })
}

/// Finds a root of `f` in `iv`, which must bracket a sign change.
///
/// Returns as soon as `|f(x)| <= tol` or the bracket is narrower than `tol`.
pub fn find_root_bracketed<F: FnMut(f64) -> f64>(
    mut f: F,
    iv: Interval,
    tol: f64,
) -> Result<f64, NumericsError> {
    iv.validate()?;
    check_tol(tol)?;
    let mut eval = |x: f64| {
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(NumericsError::NonFinite { at: x })
        }
    };
    let (mut a, mut b) = (iv.lo, iv.hi);
    let (mut fa, mut fb) = (eval(a)?, eval(b)?);
    if fa.abs() <= tol {
        return Ok(a);
    }
    if fb.abs() <= tol {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(NumericsError::NoSignChange { f_lo: fa, f_hi: fb });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    let mut evaluations = 2;
    while evaluations < MAX_EVALUATIONS {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb.abs() <= tol {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = eval(b)?;
        evaluations += 1;
    }
    Err(NumericsError::NoConvergence { evaluations })
}

/// Solution of an initial value problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeTrajectory<const N: usize> {
    pub times: Vec<f64>,
    pub states: Vec<[f64; N]>,
    /// Located upward zero crossings, `(time, label)`, in time order.
    pub events: Vec<(f64, String)>,
}

impl<const N: usize> OdeTrajectory<N> {
    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds at least the initial point")
    }

    pub fn last_state(&self) -> [f64; N] {
        *self.states.last().expect("trajectory holds at least the initial point")
    }

    /// True if a terminal event cut the integration short.
    pub fn stopped_by(&self, label: &str) -> Option<f64> {
        self.events.iter().rev().find(|(_, l)| l == label).map(|(t, _)| *t)
    }

    /// Appends `other`, dropping its first sample when it repeats our last one.
    pub fn extend(&mut self, other: OdeTrajectory<N>) {
        let skip = usize::from(
            !self.times.is_empty() && other.times.first() == self.times.last(),
        );
        self.times.extend(other.times.into_iter().skip(skip));
        self.states.extend(other.states.into_iter().skip(skip));
        self.events.extend(other.events);
    }
}

/// Scalar event function; an event fires when it crosses zero from below.
pub struct OdeEvent<'a, const N: usize> {
    pub label: String,
    pub func: &'a dyn Fn(f64, &[f64; N]) -> f64,
    /// Stop integrating at the first occurrence.
    pub terminal: bool,
}

impl<'a, const N: usize> OdeEvent<'a, N> {
    pub fn new(label: &str, func: &'a dyn Fn(f64, &[f64; N]) -> f64, terminal: bool) -> Self {
        OdeEvent { label: label.to_string(), func, terminal }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    /// Relative and absolute local error tolerance.
    pub tol: f64,
    pub max_step: f64,
    pub event_tol: f64,
}

impl OdeOptions {
    pub fn new(tol: f64) -> Self {
        OdeOptions { tol, max_step: f64::INFINITY, event_tol: EVENT_TIME_TOL }
    }

    pub fn with_max_step(mut self, max_step: f64) -> Self {
        self.max_step = max_step;
        self
    }
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions::new(DEFAULT_ODE_TOL)
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A21: f64 = 1.0 / 5.0;
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
// Fifth-order weights; also the last stage row (FSAL).
const B: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];
// Fifth minus fourth order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Step<const N: usize> {
    y: [f64; N],
    err: [f64; N],
    k7: [f64; N],
}

fn combine<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (w, k) in terms {
            acc += w * k[i];
        }
        *o += h * acc;
    }
    out
}

fn dopri_step<const N: usize, F>(f: &F, t: f64, y: &[f64; N], k1: &[f64; N], h: f64) -> Step<N>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let k2 = f(t + C[1] * h, &combine(y, h, &[(A21, k1)]));
    let k3 = f(t + C[2] * h, &combine(y, h, &[(A3[0], k1), (A3[1], &k2)]));
    let k4 = f(t + C[3] * h, &combine(y, h, &[(A4[0], k1), (A4[1], &k2), (A4[2], &k3)]));
    let k5 = f(
        t + C[4] * h,
        &combine(y, h, &[(A5[0], k1), (A5[1], &k2), (A5[2], &k3), (A5[3], &k4)]),
    );
    let k6 = f(
        t + h,
        &combine(y, h, &[(A6[0], k1), (A6[1], &k2), (A6[2], &k3), (A6[3], &k4), (A6[4], &k5)]),
    );
    let y5 = combine(y, h, &[(B[0], k1), (B[2], &k3), (B[3], &k4), (B[4], &k5), (B[5], &k6)]);
    let k7 = f(t + h, &y5);
    let zero = [0.0; N];
    let err = combine(
        &zero,
        h,
        &[(E[0], k1), (E[2], &k3), (E[3], &k4), (E[4], &k5), (E[5], &k6), (E[6], &k7)],
    );
    Step { y: y5, err, k7 }
}

fn all_finite<const N: usize>(y: &[f64; N]) -> bool {
    y.iter().all(|v| v.is_finite())
}

/// Integrates `dy/dt = field(t, y)` over `span` with default options.
pub fn integrate_ode<const N: usize, F>(
    field: F,
    y0: [f64; N],
    span: Interval,
    tol: f64,
    events: &[OdeEvent<'_, N>],
) -> Result<OdeTrajectory<N>, NumericsError>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    integrate_ode_with(field, y0, span, &OdeOptions::new(tol), events)
}

/// Adaptive Dormand-Prince integration with event location.
///
/// Every accepted step is recorded. Upward zero crossings of each event
/// function are located by bisection over fresh single steps from the start
/// of the bracketing step; a terminal event truncates the trajectory at the
/// event time.
pub fn integrate_ode_with<const N: usize, F>(
    field: F,
    y0: [f64; N],
    span: Interval,
    opts: &OdeOptions,
    events: &[OdeEvent<'_, N>],
) -> Result<OdeTrajectory<N>, NumericsError>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    span.validate()?;
    check_tol(opts.tol)?;
    check_tol(opts.event_tol)?;
    if !all_finite(&y0) {
        return Err(NumericsError::NonFinite { at: span.lo });
    }
    let mut traj = OdeTrajectory { times: vec![span.lo], states: vec![y0], events: Vec::new() };
    let mut t = span.lo;
    let mut y = y0;
    let mut k1 = field(t, &y);
    if !all_finite(&k1) {
        return Err(NumericsError::NonFinite { at: t });
    }
    let mut g_prev: Vec<f64> = events.iter().map(|e| (e.func)(t, &y)).collect();
    let max_step = opts.max_step.min(span.width());
    let mut h = (0.01 * span.width()).min(max_step);
    let tol = opts.tol;

    while t < span.hi {
        let last = t + h >= span.hi;
        if last {
            h = span.hi - t;
        }
        if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(NumericsError::StepUnderflow { t, h });
        }
        let step = dopri_step(&field, t, &y, &k1, h);
        if !all_finite(&step.y) || !all_finite(&step.k7) {
            // Treat a blown-up trial step as a rejection; a genuine
            // divergence ends in step underflow or a non-finite accept.
            h *= 0.25;
            continue;
        }
        let mut acc = 0.0;
        for i in 0..N {
            let sc = tol + tol * y[i].abs().max(step.y[i].abs());
            acc += (step.err[i] / sc).powi(2);
        }
        let err = (acc / N as f64).sqrt();
        if err > 1.0 {
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            continue;
        }
        let t_new = if last { span.hi } else { t + h };

        // Event detection on the accepted step.
        let mut terminal_hit: Option<(f64, [f64; N])> = None;
        let mut found: Vec<(f64, usize)> = Vec::new();
        for (idx, ev) in events.iter().enumerate() {
            let g_new = (ev.func)(t_new, &step.y);
            if g_prev[idx] < 0.0 && g_new >= 0.0 {
                let (mut lo, mut hi) = (0.0, t_new - t);
                while hi - lo > opts.event_tol {
                    let mid = 0.5 * (lo + hi);
                    let ym = dopri_step(&field, t, &y, &k1, mid).y;
                    if (ev.func)(t + mid, &ym) >= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                found.push((t + hi, idx));
            }
            g_prev[idx] = g_new;
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (te, idx) in found {
            if let Some((tt, _)) = terminal_hit {
                if te > tt {
                    break;
                }
            }
            traj.events.push((te, events[idx].label.clone()));
            if events[idx].terminal && terminal_hit.is_none() {
                let ye = if te >= t_new { step.y } else { dopri_step(&field, t, &y, &k1, te - t).y };
                terminal_hit = Some((te, ye));
            }
        }
        if let Some((te, ye)) = terminal_hit {
            traj.times.push(te);
            traj.states.push(ye);
            return Ok(traj);
        }

        t = t_new;
        y = step.y;
        k1 = step.k7;
        traj.times.push(t);
        traj.states.push(y);
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = (h * factor).min(max_step);
    }
    Ok(traj)
}
