//! Phase oscillators `dθ/dt = ω + Z(θ)u` and their phase response curves.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{find_root_bracketed, Interval, NumericsError};

/// Default grid used by [`analyze_structure`].
pub const DEFAULT_STRUCTURE_GRID: usize = 4096;
/// Roots closer than this to a segment boundary snap to the boundary.
pub const BOUNDARY_SNAP: f64 = 1e-9;
/// Largest accepted ratio of summed fit amplitudes to the sample maximum.
pub const CANCELLATION_LIMIT: f64 = 1e3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("PRC is not monotone on [{lo}, {hi}]")]
    NotMonotone { lo: f64, hi: f64 },
    #[error("need at least {needed} samples spanning [0, 2π], got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("harmonic fit stalled with RMS {rms:.3e} (bound {bound:.3e})")]
    IllConditioned { rms: f64, bound: f64 },
    #[error("harmonic fit terms cancel: summed amplitude is {ratio:.3e} times the data maximum")]
    Cancelling { ratio: f64 },
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Which derivative of the PRC to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    Value,
    First,
    Second,
}

impl TryFrom<u8> for Derivative {
    type Error = ModelError;

    fn try_from(order: u8) -> Result<Self, Self::Error> {
        match order {
            0 => Ok(Derivative::Value),
            1 => Ok(Derivative::First),
            2 => Ok(Derivative::Second),
            _ => Err(ModelError::Invalid(format!("derivative order {order} not supported"))),
        }
    }
}

/// `Z(θ) = z_d (1 - cos θ)`, the SNIPER (type I) PRC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SniperPrc {
    pub z_d: f64,
}

/// One term `a sin(bθ + c)` of a harmonic PRC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct HarmonicTerm {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl From<[f64; 3]> for HarmonicTerm {
    fn from([a, b, c]: [f64; 3]) -> Self {
        HarmonicTerm { a, b, c }
    }
}

impl From<HarmonicTerm> for [f64; 3] {
    fn from(t: HarmonicTerm) -> Self {
        [t.a, t.b, t.c]
    }
}

/// `Z(θ) = Σ a_i sin(b_i θ + c_i)`.
///
/// The frequencies need not be integers, so the series is generally not
/// 2π-periodic; it is evaluated as written and only ever used on `[0, 2π]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicPrc {
    pub terms: Vec<HarmonicTerm>,
}

impl HarmonicPrc {
    pub fn new(terms: Vec<HarmonicTerm>) -> Result<Self, ModelError> {
        let prc = HarmonicPrc { terms };
        prc.validate()?;
        Ok(prc)
    }

    pub fn from_table(a: &[f64], b: &[f64], c: &[f64]) -> Self {
        let terms = a
            .iter()
            .zip(b)
            .zip(c)
            .map(|((&a, &b), &c)| HarmonicTerm { a, b, c })
            .collect();
        HarmonicPrc { terms }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.terms.is_empty() {
            return Err(ModelError::Invalid("harmonic PRC needs at least one term".into()));
        }
        for t in &self.terms {
            if !(t.a.is_finite() && t.b.is_finite() && t.c.is_finite()) || t.b <= 0.0 {
                return Err(ModelError::Invalid(format!("bad harmonic term {t:?}")));
            }
        }
        Ok(())
    }

    pub fn eval(&self, theta: f64, order: Derivative) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let arg = t.b * theta + t.c;
                match order {
                    Derivative::Value => t.a * arg.sin(),
                    Derivative::First => t.a * t.b * arg.cos(),
                    Derivative::Second => -t.a * t.b * t.b * arg.sin(),
                }
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Prc {
    Sniper(SniperPrc),
    Harmonic(HarmonicPrc),
}

impl Prc {
    pub fn eval(&self, theta: f64, order: Derivative) -> f64 {
        match self {
            Prc::Sniper(s) => match order {
                Derivative::Value => s.z_d * (1.0 - theta.cos()),
                Derivative::First => s.z_d * theta.sin(),
                Derivative::Second => s.z_d * theta.cos(),
            },
            Prc::Harmonic(h) => h.eval(theta, order),
        }
    }
}

/// Natural frequency plus PRC; catalog entries serialize as
/// `{name, omega, prc: {kind, ...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseModel {
    pub name: String,
    /// Natural frequency in rad/ms.
    pub omega: f64,
    pub prc: Prc,
}

const HH_A: [f64; 8] = [0.09176, 0.07462, 0.03807, 0.02425, 0.01747, 0.006474, 0.002752, 0.0008111];
const HH_B: [f64; 8] = [1.002, 1.996, 3.002, 0.5, 3.747, 3.747, 6.228, 7.651];
const HH_C: [f64; 8] = [2.609, -1.605, 0.7233, 0.5148, 3.552, -0.7648, 0.6429, -4.726];

const ML_A: [f64; 8] = [5.137, 5.773, 0.7703, 1.065, 0.8143, 0.1028, 0.09711, 0.0698];
const ML_B: [f64; 8] = [0.4356, 0.7105, 2.185, 3.09, 3.362, 4.876, 5.829, 6.525];
const ML_C: [f64; 8] = [1.005, -1.474, 0.6535, 1.238, 3.585, 2.154, 2.375, 3.446];

impl PhaseModel {
    pub fn new(name: impl Into<String>, omega: f64, prc: Prc) -> Result<Self, ModelError> {
        let model = PhaseModel { name: name.into(), omega, prc };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(ModelError::Invalid(format!("omega must be positive, got {}", self.omega)));
        }
        match &self.prc {
            Prc::Sniper(s) if !(s.z_d > 0.0 && s.z_d.is_finite()) => {
                Err(ModelError::Invalid(format!("z_d must be positive, got {}", s.z_d)))
            }
            Prc::Harmonic(h) => h.validate(),
            _ => Ok(()),
        }
    }

    pub fn sniper(z_d: f64, omega: f64) -> Result<Self, ModelError> {
        PhaseModel::new("sniper", omega, Prc::Sniper(SniperPrc { z_d }))
    }

    /// Eight-term harmonic fit of the Hodgkin-Huxley PRC, ω = 0.43 rad/ms.
    pub fn hodgkin_huxley() -> Self {
        PhaseModel {
            name: "hodgkin_huxley".into(),
            omega: 0.43,
            prc: Prc::Harmonic(HarmonicPrc::from_table(&HH_A, &HH_B, &HH_C)),
        }
    }

    /// Eight-term harmonic fit of the Morris-Lecar PRC, ω = 0.283 rad/ms.
    pub fn morris_lecar() -> Self {
        PhaseModel {
            name: "morris_lecar".into(),
            omega: 0.283,
            prc: Prc::Harmonic(HarmonicPrc::from_table(&ML_A, &ML_B, &ML_C)),
        }
    }

    pub fn natural_period(&self) -> f64 {
        TAU / self.omega
    }

    pub fn prc_eval(&self, theta: f64, order: Derivative) -> f64 {
        self.prc.eval(theta, order)
    }

    pub fn z(&self, theta: f64) -> f64 {
        self.prc.eval(theta, Derivative::Value)
    }

    pub fn dz(&self, theta: f64) -> f64 {
        self.prc.eval(theta, Derivative::First)
    }

    pub fn d2z(&self, theta: f64) -> f64 {
        self.prc.eval(theta, Derivative::Second)
    }

    /// Phase velocity under constant control `u`.
    pub fn velocity(&self, theta: f64, u: f64) -> f64 {
        self.omega + self.z(theta) * u
    }
}

/// Built-in models: `sniper` (z_d = 1, ω = 1), `hodgkin_huxley`, `morris_lecar`.
pub fn builtin_catalog() -> Vec<PhaseModel> {
    vec![
        PhaseModel::sniper(1.0, 1.0).expect("valid builtin"),
        PhaseModel::hodgkin_huxley(),
        PhaseModel::morris_lecar(),
    ]
}

pub fn lookup_model(name: &str) -> Result<PhaseModel, ModelError> {
    builtin_catalog()
        .into_iter()
        .find(|m| m.name == name)
        .ok_or_else(|| ModelError::UnknownModel(name.to_string()))
}

/// Parses a catalog file: either one model object or an array of them.
pub fn parse_catalog(json: &str) -> Result<Vec<PhaseModel>, ModelError> {
    let value: serde_json::Value =
        serde_json::from_str(json).map_err(|e| ModelError::Invalid(e.to_string()))?;
    let models: Vec<PhaseModel> = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|m| vec![m])
    }
    .map_err(|e| ModelError::Invalid(e.to_string()))?;
    for m in &models {
        m.validate()?;
    }
    Ok(models)
}

/// Zeros, critical points and monotone pieces of a PRC on `[0, 2π]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrcStructure {
    pub zeros: Vec<f64>,
    pub critical_points: Vec<f64>,
    pub monotone_segments: Vec<Interval>,
}

impl PrcStructure {
    /// PRC value at every segment boundary (0, critical points, 2π).
    pub fn boundary_values(&self, model: &PhaseModel) -> Vec<f64> {
        let mut out = vec![model.z(0.0)];
        out.extend(self.monotone_segments.iter().map(|s| model.z(s.hi)));
        out
    }

    /// Range of `Z` over `[lo, hi]`, exact given the critical points.
    pub fn range_on(&self, model: &PhaseModel, lo: f64, hi: f64) -> (f64, f64) {
        let mut zmin = model.z(lo).min(model.z(hi));
        let mut zmax = model.z(lo).max(model.z(hi));
        for &c in self.critical_points.iter().filter(|&&c| c > lo && c < hi) {
            let zc = model.z(c);
            zmin = zmin.min(zc);
            zmax = zmax.max(zc);
        }
        (zmin, zmax)
    }
}

fn refine_sign_changes(
    f: impl Fn(f64) -> f64,
    grid: &[f64],
    include_ends: bool,
) -> Result<Vec<f64>, NumericsError> {
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let n = grid.len();
    let mut roots = Vec::new();
    for i in 0..n {
        let at_end = i == 0 || i == n - 1;
        if values[i] == 0.0 && (include_ends || !at_end) {
            roots.push(grid[i]);
        }
        if i + 1 < n && values[i] != 0.0 && values[i + 1] != 0.0 && values[i].signum() != values[i + 1].signum() {
            let iv = Interval::new(grid[i], grid[i + 1])?;
            roots.push(find_root_bracketed(&f, iv, 1e-15)?);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    Ok(roots)
}

/// Locates zeros and critical points by a sign scan on `grid_n` points followed
/// by bracketed refinement. `grid_n` below 256 is raised to 256.
pub fn analyze_structure(model: &PhaseModel, grid_n: usize) -> Result<PrcStructure, ModelError> {
    let n = grid_n.max(256);
    let grid: Vec<f64> = (0..n).map(|i| TAU * i as f64 / (n - 1) as f64).collect();
    let zeros = refine_sign_changes(|t| model.z(t), &grid, true)?;
    let critical_points: Vec<f64> = refine_sign_changes(|t| model.dz(t), &grid, false)?
        .into_iter()
        .filter(|&c| c > 0.0 && c < TAU)
        .collect();
    let mut bounds = vec![0.0];
    bounds.extend(critical_points.iter().copied());
    bounds.push(TAU);
    let monotone_segments = bounds
        .windows(2)
        .map(|w| Interval::new(w[0], w[1]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PrcStructure { zeros, critical_points, monotone_segments })
}

/// Solves `Z(θ) = alpha` on a monotone segment. Returns `None` when `alpha`
/// lies outside the PRC's range there.
pub fn invert_prc(model: &PhaseModel, alpha: f64, segment: Interval) -> Result<Option<f64>, ModelError> {
    segment.validate()?;
    // Reject segments on which dZ/dθ changes sign in the interior.
    const PROBES: usize = 256;
    let mut sign = 0.0;
    for k in 1..PROBES {
        let d = model.dz(segment.lo + segment.width() * k as f64 / PROBES as f64);
        if d != 0.0 {
            if sign != 0.0 && d.signum() != sign {
                return Err(ModelError::NotMonotone { lo: segment.lo, hi: segment.hi });
            }
            sign = d.signum();
        }
    }
    let z_lo = model.z(segment.lo) - alpha;
    let z_hi = model.z(segment.hi) - alpha;
    if z_lo == 0.0 {
        return Ok(Some(segment.lo));
    }
    if z_hi == 0.0 {
        return Ok(Some(segment.hi));
    }
    if z_lo.signum() == z_hi.signum() {
        return Ok(None);
    }
    let root = find_root_bracketed(|t| model.z(t) - alpha, segment, 1e-15)?;
    if root - segment.lo < BOUNDARY_SNAP && z_lo.abs() < z_hi.abs() {
        return Ok(Some(segment.lo));
    }
    if segment.hi - root < BOUNDARY_SNAP && z_hi.abs() < z_lo.abs() {
        return Ok(Some(segment.hi));
    }
    Ok(Some(root))
}

/// Outcome of [`fit_harmonics`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarmonicFit {
    pub prc: HarmonicPrc,
    pub rms: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Fit fails with `IllConditioned` when the final RMS exceeds this
    /// fraction of the samples' RMS.
    pub relative_rms_bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iterations: 2000, relative_rms_bound: 1e-2 }
    }
}

pub fn fit_harmonics(samples: &[(f64, f64)], n_terms: usize) -> Result<HarmonicFit, ModelError> {
    fit_harmonics_with(samples, n_terms, &FitOptions::default())
}

/// Linear least squares for `Σ p_i sin(b_i θ) + q_i cos(b_i θ)` at fixed
/// frequencies. Returns the coefficients and the residual vector.
fn project(freqs: &[f64], samples: &[(f64, f64)]) -> Option<(DVector<f64>, DVector<f64>)> {
    let m = samples.len();
    let basis = DMatrix::from_fn(m, 2 * freqs.len(), |row, col| {
        let (s, c) = (freqs[col / 2] * samples[row].0).sin_cos();
        if col % 2 == 0 {
            s
        } else {
            c
        }
    });
    let rhs = DVector::from_iterator(m, samples.iter().map(|s| s.1));
    let coef = basis.clone().svd(true, true).solve(&rhs, 1e-13).ok()?;
    let resid = basis * &coef - rhs;
    resid.iter().all(|r| r.is_finite()).then_some((coef, resid))
}

/// Levenberg-Marquardt over the frequencies alone, with amplitudes and phases
/// eliminated by [`project`]. Returns (frequencies, cost, iterations).
fn refine_frequencies(
    mut freqs: Vec<f64>,
    samples: &[(f64, f64)],
    max_iterations: usize,
) -> Option<(Vec<f64>, f64, usize)> {
    let n = freqs.len();
    let m = samples.len();
    let (_, mut resid) = project(&freqs, samples)?;
    let mut cost = resid.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < max_iterations && cost > 0.0 {
        iterations += 1;
        let mut jac = DMatrix::zeros(m, n);
        for j in 0..n {
            let h = 1e-7 * freqs[j].abs().max(1.0);
            let mut hi = freqs.clone();
            let mut lo = freqs.clone();
            hi[j] += h;
            lo[j] -= h;
            let (_, r_hi) = project(&hi, samples)?;
            let (_, r_lo) = project(&lo, samples)?;
            jac.set_column(j, &((r_hi - r_lo) / (2.0 * h)));
        }
        let scale: Vec<f64> = (0..n).map(|j| jac.column(j).norm_squared().max(1e-30)).collect();
        let mut accepted = false;
        while lambda < 1e16 {
            let mut aug = DMatrix::zeros(m + n, n);
            aug.view_mut((0, 0), (m, n)).copy_from(&jac);
            for j in 0..n {
                aug[(m + j, j)] = (lambda * scale[j]).sqrt();
            }
            let mut rhs = DVector::zeros(m + n);
            rhs.rows_mut(0, m).copy_from(&(-&resid));
            let Ok(delta) = aug.svd(true, true).solve(&rhs, 1e-15) else { break };
            let trial: Vec<f64> = freqs.iter().zip(delta.iter()).map(|(b, d)| b + d).collect();
            if let Some((_, trial_resid)) = project(&trial, samples) {
                let trial_cost = trial_resid.norm_squared();
                if trial_cost < cost {
                    let gain = (cost - trial_cost) / cost;
                    freqs = trial;
                    resid = trial_resid;
                    cost = trial_cost;
                    lambda = (lambda / 5.0).max(1e-12);
                    accepted = gain > 1e-14;
                    break;
                }
            }
            lambda *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    Some((freqs, cost, iterations))
}

/// Nonlinear least-squares fit of `Σ a_i sin(b_i θ + c_i)`.
///
/// Frequencies start at `1..=n_terms`, with amplitudes and phases given by the
/// linear projection at those frequencies. The amplitudes and phases stay
/// eliminated throughout, so the Levenberg-Marquardt search runs over the
/// frequencies only. When that start stalls above `1e-9` of the data RMS, a
/// second start uses the `n_terms` strongest integer frequencies from a wider
/// projection, and the better of the two is kept.
///
/// Fits whose terms cancel, `Σ|a| > CANCELLATION_LIMIT · max|z|`, fail with
/// `Cancelling`: such a model loses digits in every evaluation.
pub fn fit_harmonics_with(
    samples: &[(f64, f64)],
    n_terms: usize,
    opts: &FitOptions,
) -> Result<HarmonicFit, ModelError> {
    let needed = 4 * n_terms.max(1);
    let (t_min, t_max) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(t, _)| (lo.min(t), hi.max(t)));
    if n_terms == 0 || samples.len() < needed || t_max - t_min < PI {
        return Err(ModelError::InsufficientSamples { needed, got: samples.len() });
    }
    if samples.iter().any(|(t, z)| !t.is_finite() || !z.is_finite()) {
        return Err(ModelError::Invalid("non-finite sample".into()));
    }
    let m = samples.len() as f64;
    let sample_rms = (samples.iter().map(|s| s.1 * s.1).sum::<f64>() / m).sqrt();

    let start: Vec<f64> = (1..=n_terms).map(|k| k as f64).collect();
    let stalled = |cost: f64| (cost / m).sqrt() > 1e-9 * sample_rms;
    let mut best = refine_frequencies(start, samples, opts.max_iterations);
    if best.as_ref().is_none_or(|b| stalled(b.1)) {
        let wide = (4 * n_terms).max(16);
        let all: Vec<f64> = (1..=wide).map(|k| k as f64).collect();
        if let Some((coef, _)) = project(&all, samples) {
            let mut ranked: Vec<(f64, f64)> =
                all.iter().enumerate().map(|(i, &k)| (coef[2 * i].hypot(coef[2 * i + 1]), k)).collect();
            ranked.sort_by(|x, y| y.0.total_cmp(&x.0));
            let mut seeded: Vec<f64> = ranked.iter().take(n_terms).map(|r| r.1).collect();
            seeded.sort_by(f64::total_cmp);
            if let Some(alt) = refine_frequencies(seeded, samples, opts.max_iterations) {
                if best.as_ref().is_none_or(|b| alt.1 < b.1) {
                    best = Some(alt);
                }
            }
        }
    }
    let (freqs, cost, iterations) = best.ok_or(ModelError::IllConditioned { rms: f64::NAN, bound: 0.0 })?;
    let rms = (cost / m).sqrt();
    let bound = opts.relative_rms_bound * sample_rms.max(f64::MIN_POSITIVE);
    if !rms.is_finite() || rms > bound {
        return Err(ModelError::IllConditioned { rms, bound });
    }
    let (coef, _) = project(&freqs, samples).ok_or(ModelError::IllConditioned { rms, bound })?;
    let terms = freqs
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let (p, q) = (coef[2 * i], coef[2 * i + 1]);
            normalize_term(HarmonicTerm { a: p.hypot(q), b, c: q.atan2(p) })
        })
        .collect::<Vec<HarmonicTerm>>();
    let z_max = samples.iter().map(|s| s.1.abs()).fold(0.0, f64::max);
    let ratio = terms.iter().map(|t| t.a).sum::<f64>() / z_max;
    if ratio > CANCELLATION_LIMIT {
        return Err(ModelError::Cancelling { ratio });
    }
    Ok(HarmonicFit { prc: HarmonicPrc { terms }, rms, iterations })
}

/// Canonical form with `b > 0`, `a >= 0`, `c ∈ (-π, π]`.
fn normalize_term(mut t: HarmonicTerm) -> HarmonicTerm {
    if t.b < 0.0 {
        t = HarmonicTerm { a: -t.a, b: -t.b, c: -t.c };
    }
    if t.a < 0.0 {
        t.a = -t.a;
        t.c += PI;
    }
    t.c = t.c.rem_euclid(TAU);
    if t.c > PI {
        t.c -= TAU;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hh() -> PhaseModel {
        PhaseModel::hodgkin_huxley()
    }

    /// Dense sign scan with linear interpolation; independent of the
    /// bracketed refinement used in the implementation.
    fn scan_roots(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
        let mut out = Vec::new();
        let mut prev = (lo, f(lo));
        for i in 1..=n {
            let t = lo + (hi - lo) * i as f64 / n as f64;
            let v = f(t);
            if prev.1.signum() != v.signum() && prev.1 != 0.0 {
                out.push(prev.0 + (t - prev.0) * prev.1 / (prev.1 - v));
            }
            prev = (t, v);
        }
        out
    }

    #[test]
    fn sniper_values() {
        let m = PhaseModel::sniper(1.0, 1.0).unwrap();
        assert_eq!(m.prc_eval(0.0, Derivative::Value), 0.0);
        assert!((m.prc_eval(PI, Derivative::Value) - 2.0).abs() < 1e-15);
        assert_eq!(Derivative::try_from(3).ok(), None);
    }

    #[test]
    fn model_validation() {
        assert!(PhaseModel::sniper(0.0, 1.0).is_err());
        assert!(PhaseModel::sniper(1.0, -1.0).is_err());
        let bad = HarmonicPrc::new(vec![HarmonicTerm { a: 1.0, b: 0.0, c: 0.0 }]);
        assert!(bad.is_err());
        assert!(HarmonicPrc::new(vec![]).is_err());
    }

    #[test]
    fn hh_derivative_vanishes_at_extrema() {
        // Values from a 1e6-point scan of the tabulated coefficients.
        assert!(hh().prc_eval(3.27594, Derivative::First).abs() < 1e-4);
        assert!(hh().prc_eval(4.58, Derivative::First).abs() < 2e-2);
    }

    #[test]
    fn sniper_structure() {
        let m = PhaseModel::sniper(1.0, 1.0).unwrap();
        let s = analyze_structure(&m, DEFAULT_STRUCTURE_GRID).unwrap();
        assert_eq!(s.critical_points.len(), 1);
        assert!((s.critical_points[0] - PI).abs() < 1e-12);
        assert_eq!(s.zeros.len(), 2);
        assert_eq!(s.zeros[0], 0.0);
        assert!((s.zeros[1] - TAU).abs() < 1e-12);
        assert_eq!(s.monotone_segments.len(), 2);
    }

    #[test]
    fn hh_structure_matches_dense_scan() {
        let m = hh();
        let s = analyze_structure(&m, DEFAULT_STRUCTURE_GRID).unwrap();
        let crit = scan_roots(|t| m.dz(t), 0.0, TAU, 1_000_000);
        assert_eq!(s.critical_points.len(), crit.len());
        for (a, b) in s.critical_points.iter().zip(&crit) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        // The two dominant extrema: the PRC minimum and maximum.
        let (imin, imax) = (0..s.critical_points.len()).fold((0, 0), |(lo, hi), i| {
            let z = m.z(s.critical_points[i]);
            (
                if z < m.z(s.critical_points[lo]) { i } else { lo },
                if z > m.z(s.critical_points[hi]) { i } else { hi },
            )
        });
        assert!((s.critical_points[imax] - 4.58).abs() < 2e-2);
        assert!((s.critical_points[imin] - 3.2759).abs() < 1e-3);
        // Interior zero near 3.86.
        assert!(s.zeros.iter().any(|z| (z - 3.86).abs() < 2e-2), "{:?}", s.zeros);
    }

    #[test]
    fn hh_zero_set_is_complete() {
        let m = hh();
        let s = analyze_structure(&m, DEFAULT_STRUCTURE_GRID).unwrap();
        let dense = scan_roots(|t| m.z(t), 0.0, TAU, 100_000);
        assert_eq!(dense.len(), s.zeros.len());
        for (a, b) in s.zeros.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-6);
        }
        // Sign is constant strictly between consecutive zeros.
        let mut bounds = vec![0.0];
        bounds.extend(&s.zeros);
        bounds.push(TAU);
        for w in bounds.windows(2) {
            if w[1] - w[0] < 1e-9 {
                continue;
            }
            let probes: Vec<f64> = (1..100).map(|k| m.z(w[0] + (w[1] - w[0]) * k as f64 / 100.0)).collect();
            assert!(probes.iter().all(|v| v.signum() == probes[0].signum()));
        }
    }

    #[test]
    fn segments_partition_circle() {
        for m in builtin_catalog() {
            let s = analyze_structure(&m, DEFAULT_STRUCTURE_GRID).unwrap();
            assert_eq!(s.monotone_segments.first().unwrap().lo, 0.0);
            assert_eq!(s.monotone_segments.last().unwrap().hi, TAU);
            for w in s.monotone_segments.windows(2) {
                assert_eq!(w[0].hi, w[1].lo);
                assert!(s.critical_points.contains(&w[0].hi));
            }
        }
    }

    #[test]
    fn sniper_inversion() {
        let m = PhaseModel::sniper(1.0, 1.0).unwrap();
        let seg = Interval::new(0.0, PI).unwrap();
        let root = invert_prc(&m, 2.0, seg).unwrap().unwrap();
        assert!((root - PI).abs() < 1e-12);
        let root = invert_prc(&m, 1.0, seg).unwrap().unwrap();
        assert!((root - PI / 2.0).abs() < 1e-12);
        assert_eq!(invert_prc(&m, 2.5, seg).unwrap(), None);
        let err = invert_prc(&m, 1.0, Interval::new(0.0, 4.0).unwrap()).unwrap_err();
        assert!(matches!(err, ModelError::NotMonotone { .. }));
    }

    #[test]
    fn hh_inversion_matches_grid_scan() {
        let m = hh();
        let s = analyze_structure(&m, DEFAULT_STRUCTURE_GRID).unwrap();
        // Segment ending at the PRC maximum (the 4.58 side).
        let seg = *s
            .monotone_segments
            .iter()
            .find(|seg| (seg.hi - 4.59).abs() < 2e-2)
            .unwrap();
        let root = invert_prc(&m, 0.2 - 0.01, seg).unwrap().unwrap();
        let scan = scan_roots(|t| m.z(t) - 0.19, seg.lo, seg.hi, 1_000_000);
        assert_eq!(scan.len(), 1);
        assert!((root - scan[0]).abs() < 1e-6);
        // Z never reaches 0.2 on the tabulated fit (its maximum is 0.1974).
        assert_eq!(invert_prc(&m, 0.2, seg).unwrap(), None);
    }

    #[test]
    fn catalog_round_trip() {
        let json = serde_json::to_string(&builtin_catalog()).unwrap();
        assert!(json.contains("\"kind\":\"harmonic\""));
        let back = parse_catalog(&json).unwrap();
        assert_eq!(back, builtin_catalog());
        let single = r#"{"name":"s2","omega":2.0,"prc":{"kind":"sniper","z_d":0.5}}"#;
        let m = parse_catalog(single).unwrap();
        assert_eq!(m[0].prc, Prc::Sniper(SniperPrc { z_d: 0.5 }));
        assert!(parse_catalog(r#"{"name":"x","omega":-1,"prc":{"kind":"sniper","z_d":1}}"#).is_err());
        assert!(lookup_model("nope").is_err());
    }

    fn grid_samples(f: impl Fn(f64) -> f64, n: usize) -> Vec<(f64, f64)> {
        (0..n).map(|i| TAU * i as f64 / (n - 1) as f64).map(|t| (t, f(t))).collect()
    }

    #[test]
    fn fit_single_sinusoid() {
        let samples = grid_samples(|t| 0.5 * (t + 0.3).sin(), 128);
        let fit = fit_harmonics(&samples, 1).unwrap();
        let t = fit.prc.terms[0];
        assert!(fit.rms < 1e-8, "{}", fit.rms);
        assert!((t.a - 0.5).abs() < 1e-6 && (t.b - 1.0).abs() < 1e-6 && (t.c - 0.3).abs() < 1e-6, "{t:?}");
    }

    #[test]
    fn fit_two_term_synthetic() {
        let samples = grid_samples(|t| t.sin() + 0.1 * (5.0 * t).sin(), 256);
        let fit = fit_harmonics(&samples, 2).unwrap();
        assert!(fit.rms < 1e-6, "{}", fit.rms);
    }

    #[test]
    fn fit_rejects_cancelling_terms() {
        // Without the endpoint this grid lets two frequencies near 3.457
        // absorb the table's duplicated term with amplitudes of order 1e3.
        let m = hh();
        let samples: Vec<(f64, f64)> = (0..400).map(|i| TAU * i as f64 / 400.0).map(|t| (t, m.z(t))).collect();
        assert!(matches!(fit_harmonics(&samples, 8), Err(ModelError::Cancelling { ratio }) if ratio > CANCELLATION_LIMIT));
    }

    #[test]
    fn fit_round_trips_hh_table() {
        let m = hh();
        let samples = grid_samples(|t| m.z(t), 512);
        let fit = fit_harmonics(&samples, 8).unwrap();
        assert!(fit.rms < 1e-6, "{}", fit.rms);
        let max_dev = samples
            .iter()
            .map(|&(t, z)| (fit.prc.eval(t, Derivative::Value) - z).abs())
            .fold(0.0, f64::max);
        assert!(max_dev < 1e-5);
    }

    #[test]
    fn fit_rejects_thin_or_hopeless_data() {
        let few = grid_samples(f64::sin, 7);
        assert!(matches!(fit_harmonics(&few, 2), Err(ModelError::InsufficientSamples { .. })));
        // A square wave cannot be captured by one sinusoid to 1e-3 relative.
        let square = grid_samples(|t| if t < PI { 1.0 } else { -1.0 }, 200);
        let opts = FitOptions { max_iterations: 200, relative_rms_bound: 1e-3 };
        assert!(matches!(fit_harmonics_with(&square, 1, &opts), Err(ModelError::IllConditioned { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn derivatives_match_finite_differences(theta in 0.0..TAU, which in 0usize..3) {
                let m = &builtin_catalog()[which];
                let h = 1e-5;
                let fd1 = (m.z(theta + h) - m.z(theta - h)) / (2.0 * h);
                let fd2 = (m.dz(theta + h) - m.dz(theta - h)) / (2.0 * h);
                let scale = match which { 2 => 50.0, _ => 1.0 };
                prop_assert!((fd1 - m.dz(theta)).abs() < 1e-6 * scale);
                prop_assert!((fd2 - m.d2z(theta)).abs() < 1e-6 * scale);
            }

            #[test]
            fn sniper_shape(theta in 0.0..TAU, z_d in 0.1..3.0f64) {
                let m = PhaseModel::sniper(z_d, 1.0).unwrap();
                prop_assert!(m.z(theta) >= 0.0);
                prop_assert!(m.z(theta) <= 2.0 * z_d + 1e-15);
                prop_assert!((m.z(theta) - m.z(TAU - theta)).abs() < 1e-12);
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]

            #[test]
            fn inversion_is_right_inverse(which in 0usize..3, seg_pick in 0usize..16, frac in 0.0..1.0f64) {
                let m = &builtin_catalog()[which];
                let s = analyze_structure(m, DEFAULT_STRUCTURE_GRID).unwrap();
                let seg = s.monotone_segments[seg_pick % s.monotone_segments.len()];
                let (lo, hi) = s.range_on(m, seg.lo, seg.hi);
                let alpha = lo + (hi - lo) * frac;
                if let Some(theta) = invert_prc(m, alpha, seg).unwrap() {
                    prop_assert!((m.z(theta) - alpha).abs() < 1e-8);
                    prop_assert!(seg.contains(theta));
                }
            }
        }
    }
}
