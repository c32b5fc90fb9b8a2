//! Charge-balanced minimum- and maximum-time stimuli for phase-reduced
//! neural oscillators, with Hodgkin-Huxley validation.

pub mod hh;
pub mod numerics;
pub mod phase_model;
pub mod schedule_sim;
pub mod sweep;
pub mod synthesis;

use serde::Serialize;

/// Environment variable that overrides the default solver tolerances.
pub const TOL_ENV: &str = "SPIKEOPT_TOL";

/// Solver tolerances shared across modules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct Tolerances {
    pub quad: f64,
    pub root: f64,
    pub ode: f64,
    pub event: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            quad: numerics::DEFAULT_QUAD_TOL,
            root: numerics::DEFAULT_ROOT_TOL,
            ode: numerics::DEFAULT_ODE_TOL,
            event: numerics::EVENT_TIME_TOL,
        }
    }
}

impl Tolerances {
    /// One value applied to every tolerance.
    pub fn uniform(tol: f64) -> Self {
        Tolerances { quad: tol, root: tol, ode: tol, event: tol }
    }

    /// Defaults, or a uniform tolerance read from `SPIKEOPT_TOL`.
    pub fn from_env() -> Result<Self, String> {
        match std::env::var(TOL_ENV) {
            Ok(s) => {
                let tol: f64 = s.trim().parse().map_err(|_| format!("{TOL_ENV}={s:?} is not a number"))?;
                if !(tol > 0.0 && tol.is_finite()) {
                    return Err(format!("{TOL_ENV} must be positive, got {tol}"));
                }
                Ok(Tolerances::uniform(tol))
            }
            Err(_) => Ok(Tolerances::default()),
        }
    }
}

/// Rounds to 12 significant digits.
pub fn round_sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Formats with at most 12 significant digits in the shortest form.
pub fn fmt_sig12(x: f64) -> String {
    let r = round_sig12(x);
    if r == 0.0 || !r.is_finite() || (1e-6..1e15).contains(&r.abs()) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

fn round_json(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) => {
            if let Some(x) = n.as_f64().filter(|_| n.is_f64()) {
                if let Some(r) = serde_json::Number::from_f64(round_sig12(x)) {
                    *n = r;
                }
            }
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_json),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to 12 significant digits.
pub fn to_json_sig12<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_json(&mut v);
    serde_json::to_string_pretty(&v)
}
