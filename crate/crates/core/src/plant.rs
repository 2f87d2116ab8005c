//! Averaged boost-converter model charging a battery from the PV array.
//!
//! ```text
//! C dv_C/dt = u I - (v_C - v_b) / R_b
//! L dI/dt   = -u v_C + V
//! I         = a1 - a2 (exp(a3 (V + a4 I)) - 1) - a5 (V + a4 I)
//! ```
//!
//! The inductor current is a state, so the array voltage `V` is the algebraic
//! variable: it is re-solved from `I` at every right-hand-side evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::rk4_step;
use crate::pv_model::{clamped_exp, solve_current, IVParams};
use crate::roots::{increasing_root, Eval};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    /// H
    pub inductance: f64,
    /// F
    pub capacitance: f64,
    /// Ω
    pub battery_resistance: f64,
    /// V
    pub battery_voltage: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            inductance: 5e-3,
            capacitance: 1e-3,
            battery_resistance: 0.5,
            battery_voltage: 760.0,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("inductance", self.inductance),
            ("capacitance", self.capacitance),
            ("battery_resistance", self.battery_resistance),
            ("battery_voltage", self.battery_voltage),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("plant.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub amplitude: f64,
    /// rad/s
    pub omega: f64,
}

/// `u(t) = bias + Σ A_k sin(ω_k t)`, with `u = 1 - d` for duty cycle `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlLaw {
    pub bias: f64,
    #[serde(default)]
    pub harmonics: Vec<Harmonic>,
}

impl ControlLaw {
    /// `0.8 + 0.1 sin(3t) + 0.1 sin(4t)`
    pub fn two_tone() -> Self {
        Self {
            bias: 0.8,
            harmonics: vec![
                Harmonic { amplitude: 0.1, omega: 3.0 },
                Harmonic { amplitude: 0.1, omega: 4.0 },
            ],
        }
    }

    pub fn constant(bias: f64) -> Self {
        Self { bias, harmonics: Vec::new() }
    }

    /// Worst-case bounds of the law over all t.
    pub fn range(&self) -> (f64, f64) {
        let spread: f64 = self.harmonics.iter().map(|h| h.amplitude.abs()).sum();
        (self.bias - spread, self.bias + spread)
    }
}

impl Default for ControlLaw {
    fn default() -> Self {
        Self::two_tone()
    }
}

pub fn control(law: &ControlLaw, t: f64) -> Result<f64> {
    let u = law.bias + law.harmonics.iter().map(|h| h.amplitude * (h.omega * t).sin()).sum::<f64>();
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::config(format!("control u({t}) = {u} outside (0, 1]")));
    }
    Ok(u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlantState {
    pub v_c: f64,
    pub i: f64,
    /// Array voltage (algebraic).
    pub v: f64,
    pub t: f64,
}

impl PlantState {
    /// `v_C = v_b`, current on the curve at `V = v_b u(0)`, and `V` re-solved
    /// from that current.
    pub fn initial(params: &PlantParams, a: &IVParams, u0: f64) -> Result<Self> {
        let v_c = params.battery_voltage;
        let i = solve_current(a, v_c * u0, a.a1)?;
        let v = algebraic_voltage(a, i, v_c * u0).map_err(|e| at_time(e, 0.0))?;
        Ok(Self { v_c, i, v, t: 0.0 })
    }
}

/// Solves the characteristic for `V` given the current `I`.
///
/// With `x = V + a4 I` the constraint reads
/// `a2 (e^(a3 x) - 1) + a5 x = a1 - I`, strictly increasing in `x`, so the
/// root is unique. Fails when the resulting voltage is negative (current above
/// short circuit) or when no root exists.
pub fn algebraic_voltage(a: &IVParams, i: f64, hint_v: f64) -> Result<f64> {
    if !i.is_finite() {
        return Err(Error::NonFinite("array current"));
    }
    if a.a5 <= 0.0 && (a.a2 <= 0.0 || i >= a.a1 + a.a2) {
        return Err(Error::AlgebraicConstraint {
            t: f64::NAN,
            reason: format!("current {i} A has no voltage on the curve"),
        });
    }
    let target = a.a1 - i;
    let eval = |x: f64| {
        let (e, clamped) = clamped_exp(a.a3 * x);
        Eval {
            value: a.a2 * (e - 1.0) + a.a5 * x - target,
            slope: a.a2 * a.a3 * e + a.a5,
            clamped,
        }
    };
    let hi = if a.a5 > 0.0 {
        (target.abs() + a.a2) / a.a5
    } else {
        (target / a.a2 + 1.0).ln() / a.a3
    };
    let x = increasing_root(eval, hint_v + a.a4 * i, -hi.abs() - 1.0, hi.abs() + 1.0, |_| {
        1e-10 * target.abs().max(i.abs()).max(1.0)
    })
    .map_err(|e| Error::AlgebraicConstraint {
        t: f64::NAN,
        reason: e.to_string(),
    })?;
    let v = x - a.a4 * i;
    if v < 0.0 {
        return Err(Error::AlgebraicConstraint {
            t: f64::NAN,
            reason: format!("current {i} A exceeds short-circuit current (V = {v})"),
        });
    }
    Ok(v)
}

pub(crate) fn at_time(e: Error, t: f64) -> Error {
    match e {
        Error::AlgebraicConstraint { reason, .. } => Error::AlgebraicConstraint { t, reason },
        other => other,
    }
}

/// `dI/dt = (-u v_C + V) / L`, available from measured signals.
pub fn time_derivative_i(params: &PlantParams, state: &PlantState, u: f64) -> f64 {
    (-u * state.v_c + state.v) / params.inductance
}

/// State derivatives `(dv_C/dt, dI/dt)` at a given `(v_C, I, V)`.
pub(crate) fn converter_rhs(params: &PlantParams, u: f64, v_c: f64, i: f64, v: f64) -> [f64; 2] {
    [
        (u * i - (v_c - params.battery_voltage) / params.battery_resistance) / params.capacitance,
        (-u * v_c + v) / params.inductance,
    ]
}

/// One RK4 step with `u` held over the step.
pub fn step(params: &PlantParams, a: &IVParams, state: &PlantState, u: f64, dt: f64) -> Result<PlantState> {
    if !(dt > 0.0) {
        return Err(Error::config("dt must be positive"));
    }
    let mut v_hint = state.v;
    let y = rk4_step(&[state.v_c, state.i], state.t, dt, |t, y| {
        let v = algebraic_voltage(a, y[1], v_hint).map_err(|e| at_time(e, t))?;
        v_hint = v;
        Ok(converter_rhs(params, u, y[0], y[1], v))
    })?;
    let t = state.t + dt;
    let v = algebraic_voltage(a, y[1], v_hint).map_err(|e| at_time(e, t))?;
    Ok(PlantState { v_c: y[0], i: y[1], v, t })
}
