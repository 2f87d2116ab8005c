//! Maximum-power-point voltage: stationarity function, adaptive observer and
//! a brute-force reference search.
//!
//! In the `b` parameterisation the curve reads `I = F(V, I) = b1 - b2 e^(a3 (V + a4 I)) - b3 V`.
//! Two stationarity functions are available:
//!
//! * [`StationarityForm::ClosedForm`] composes `h(V, I) = F + V ∂F/∂V` with the
//!   explicit MPP current `g(V)`. It needs no implicit solve, but `∂F/∂V` holds
//!   `I` fixed, so for `a4 > 0` its root sits a few volts below the true power
//!   maximum.
//! * [`StationarityForm::OnCurve`] evaluates the total derivative `dP/dV`
//!   along the curve. `P(V)` is strictly concave for `V > 0`, so this is
//!   strictly decreasing and its root is exactly the power maximum.
//!
//! Both are strictly decreasing on the positive half-line, which is what
//! makes the observer `dV̂/dt = γ_V H(V̂)` globally convergent.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pv_model::{clamped_exp, open_circuit_voltage, solve_current, IVParams};
use crate::roots::{increasing_root, Eval};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MppParams {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub a3: f64,
    pub a4: f64,
}

impl MppParams {
    pub fn from_iv(a: &IVParams) -> Self {
        let d = 1.0 + a.a4 * a.a5;
        Self {
            b1: (a.a1 + a.a2) / d,
            b2: a.a2 / d,
            b3: a.a5 / d,
            a3: a.a3,
            a4: a.a4,
        }
    }

    pub fn is_positive(&self) -> bool {
        [self.b1, self.b2, self.b3, self.a3, self.a4]
            .iter()
            .all(|x| *x > 0.0 && x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StationarityForm {
    ClosedForm,
    #[default]
    OnCurve,
}

/// Function value plus an overflow flag (exponent hit the clamp).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HValue {
    pub value: f64,
    pub overflow: bool,
}

/// `h(V, I) = b1 - (b2 + b2 a3 V) e^(a3 (V + a4 I)) - 2 b3 V`
pub fn power_derivative_h(p: &MppParams, v: f64, i: f64) -> HValue {
    let (e, overflow) = clamped_exp(p.a3 * (v + p.a4 * i));
    HValue {
        value: p.b1 - (p.b2 + p.b2 * p.a3 * v) * e - 2.0 * p.b3 * v,
        overflow,
    }
}

/// MPP current implied by `h = 0` and the curve:
/// `g(V) = (2 b3 V - b1) / (1 + a3 V) + b1 - b3 V`.
pub fn mpp_current_g(p: &MppParams, v: f64) -> f64 {
    (2.0 * p.b3 * v - p.b1) / (1.0 + p.a3 * v) + p.b1 - p.b3 * v
}

/// Curve current at `V` from the `b` parameterisation.
pub fn curve_current(p: &MppParams, v: f64, hint: f64) -> Result<f64> {
    let eval = |i: f64| {
        let (e, clamped) = clamped_exp(p.a3 * (v + p.a4 * i));
        Eval {
            value: i - p.b1 + p.b2 * e + p.b3 * v,
            slope: 1.0 + p.b2 * p.a3 * p.a4 * e,
            clamped,
        }
    };
    increasing_root(eval, hint, -p.b1.abs() - 1.0, p.b1.abs() + 1.0, |i| 1e-12 * i.abs().max(p.b1.abs()).max(1.0))
}

/// `dP/dV` along the curve at `(V, I)`, `I` on the curve.
pub fn on_curve_slope(p: &MppParams, v: f64, i: f64) -> HValue {
    let (e, overflow) = clamped_exp(p.a3 * (v + p.a4 * i));
    let big_e = p.b2 * e;
    HValue {
        value: i - v * (p.a3 * big_e + p.b3) / (1.0 + p.a3 * p.a4 * big_e),
        overflow,
    }
}

/// Stationarity function `H(V)`; its positive root is the MPP voltage.
pub fn stationarity(p: &MppParams, v: f64, form: StationarityForm) -> HValue {
    match form {
        StationarityForm::ClosedForm => power_derivative_h(p, v, mpp_current_g(p, v)),
        StationarityForm::OnCurve => match curve_current(p, v, p.b1 - p.b3 * v) {
            Ok(i) => on_curve_slope(p, v, i),
            Err(_) => HValue { value: f64::NAN, overflow: true },
        },
    }
}

/// Root of `H` on `[lo, hi]` by bisection (`H(lo) > 0 > H(hi)` required).
pub fn stationarity_root(p: &MppParams, form: StationarityForm, lo: f64, hi: f64) -> Result<f64> {
    let f = |v: f64| stationarity(p, v, form);
    let (mut lo, mut hi) = (lo, hi);
    let (flo, fhi) = (f(lo), f(hi));
    if flo.overflow || fhi.overflow || !(flo.value > 0.0 && fhi.value < 0.0) {
        return Err(Error::MppSearch(format!(
            "H does not change sign on [{lo}, {hi}] ({} .. {})",
            flo.value, fhi.value
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm.overflow || fm.value < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MppObserver {
    pub v_hat: f64,
    pub gamma_v: f64,
    pub step_reductions: u64,
    #[serde(skip)]
    i_hint: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObserverStep {
    Advanced,
    /// `H` overflowed or was not finite; the estimate was kept.
    Held,
}

/// Bound on `γ_V |H'| h` for the explicit Euler update.
pub const OBSERVER_SAFETY: f64 = 0.5;

impl MppObserver {
    pub fn new(v_hat: f64, gamma_v: f64) -> Self {
        Self {
            v_hat: v_hat.max(0.0),
            gamma_v,
            step_reductions: 0,
            i_hint: 0.0,
        }
    }

    fn eval(&mut self, p: &MppParams, v: f64, form: StationarityForm) -> HValue {
        match form {
            StationarityForm::ClosedForm => stationarity(p, v, form),
            StationarityForm::OnCurve => match curve_current(p, v, self.i_hint) {
                Ok(i) => {
                    self.i_hint = i;
                    on_curve_slope(p, v, i)
                }
                Err(_) => HValue { value: f64::NAN, overflow: true },
            },
        }
    }
}

/// `V̂ += γ_V H(V̂) h`, clamped at zero. `h` starts at `dt` and is halved
/// while `γ_V |H'(V̂)| h` exceeds [`OBSERVER_SAFETY`].
pub fn observer_step(obs: &mut MppObserver, p: &MppParams, form: StationarityForm, dt: f64) -> ObserverStep {
    let v = obs.v_hat;
    let h0 = obs.eval(p, v, form);
    if h0.overflow || !h0.value.is_finite() {
        return ObserverStep::Held;
    }
    let dv = 1e-3 * v.max(1.0);
    let h1 = obs.eval(p, v + dv, form);
    // restore the hint for the current point
    let _ = obs.eval(p, v, form);
    let slope = if h1.overflow || !h1.value.is_finite() {
        0.0
    } else {
        ((h1.value - h0.value) / dv).abs()
    };
    let mut h = dt;
    while obs.gamma_v * slope * h >= OBSERVER_SAFETY && h > 0.0 {
        h *= 0.5;
        obs.step_reductions += 1;
    }
    obs.v_hat = (v + obs.gamma_v * h0.value * h).max(0.0);
    ObserverStep::Advanced
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MppPoint {
    pub v: f64,
    pub i: f64,
    pub p: f64,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Grid search of `P(V) = V I(V)` on `[0, v_max]` followed by golden-section
/// refinement around the best grid point.
pub fn brute_force_mpp(a: &IVParams, v_max: f64, n: usize) -> Result<MppPoint> {
    if n < 3 {
        return Err(Error::MppSearch("grid needs at least 3 points".into()));
    }
    if !(v_max > 0.0 && v_max.is_finite()) {
        return Err(Error::MppSearch(format!("v_max must be positive, got {v_max}")));
    }
    let step = v_max / (n - 1) as f64;
    let mut hint = a.a1;
    let mut power = Vec::with_capacity(n);
    for k in 0..n {
        let v = step * k as f64;
        let i = solve_current(a, v, hint)?;
        hint = i;
        power.push(v * i);
    }
    let best = (0..n).max_by(|&x, &y| power[x].total_cmp(&power[y])).unwrap_or(0);
    if best == 0 || best == n - 1 {
        return Err(Error::MppSearch(format!(
            "power maximum at the range boundary (index {best}); widen the range"
        )));
    }
    if !(power[best - 1] <= power[best] && power[best + 1] <= power[best]) {
        return Err(Error::MppSearch("non-concave samples around the grid maximum".into()));
    }

    let mut hint = solve_current(a, step * best as f64, hint)?;
    let mut p_of = |v: f64| -> Result<f64> {
        let i = solve_current(a, v, hint)?;
        hint = i;
        Ok(v * i)
    };
    let (mut lo, mut hi) = (step * (best - 1) as f64, step * (best + 1) as f64);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = p_of(x1)?;
    let mut f2 = p_of(x2)?;
    while hi - lo > 1e-7 * v_max.max(1.0) {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = p_of(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = p_of(x1)?;
        }
    }
    let v = 0.5 * (lo + hi);
    let i = solve_current(a, v, a.a1)?;
    Ok(MppPoint { v, i, p: v * i })
}

/// Brute-force MPP over `[0, V_oc]`.
pub fn reference_mpp(a: &IVParams) -> Result<MppPoint> {
    brute_force_mpp(a, open_circuit_voltage(a)?, 64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObserverRecord {
    pub t: f64,
    pub v_hat: f64,
    pub v_star_true: f64,
    pub h_v_hat: f64,
}

/// Writes `t, v_hat, v_star_true, h_v_hat`.
pub fn write_observer_csv<W: Write>(out: W, records: &[ObserverRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "v_hat", "v_star_true", "h_v_hat"])?;
    for r in records {
        w.write_record(&[
            r.t.to_string(),
            r.v_hat.to_string(),
            r.v_star_true.to_string(),
            r.h_v_hat.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
