//! Linear regression `y = Ω^T θ` built from measured converter signals.
//!
//! Five first-order filters with pole `λ` plus one auxiliary state turn the
//! differentiated characteristic into a regression whose parameters `θ` are a
//! rational function of the lumped IV parameters `a`:
//!
//! ```text
//! ξ1 = [λ/(p+λ)] I          ξ2 = -[λ/(p+λ)] V        ξ3 = ½[λ/(p+λ)] V²
//! ξ4 = ½[λ/(p+λ)] I²        ξ5 = -[λ/(p+λ)] (V dI/dt)
//! χ  = [1/(p+λ)] (dI/dt · dξ2/dt)
//!
//! y = dξ1/dt,  Ω = (χ - I dξ2/dt, dξ2/dt, dξ3/dt, dξ4/dt, -ξ5)
//! ```
//!
//! The first regressor entry is the swapped form of `[λ/(p+λ)](I dV/dt)`, so
//! `dV/dt` is never needed. `dI/dt` comes from the inductor equation. The
//! `V dI/dt` term enters the differentiated characteristic with a positive
//! coefficient, hence `-ξ5` in the regressor.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::rk4_step;
use crate::plant::{algebraic_voltage, at_time, converter_rhs, PlantParams, PlantState};
use crate::pv_model::IVParams;

/// Instantaneous measured signals feeding the filters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Signals {
    pub v: f64,
    pub i: f64,
    pub i_dot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterBank {
    pub lambda: f64,
    pub xi: [f64; 5],
    pub chi: f64,
}

impl FilterBank {
    pub fn zeroed(lambda: f64) -> Self {
        Self { lambda, xi: [0.0; 5], chi: 0.0 }
    }

    /// Filters started at their DC steady state for constant inputs `sig`.
    pub fn at_rest(lambda: f64, sig: Signals) -> Self {
        Self {
            lambda,
            xi: [sig.i, -sig.v, 0.5 * sig.v * sig.v, 0.5 * sig.i * sig.i, -sig.v * sig.i_dot],
            chi: 0.0,
        }
    }

    fn states(&self) -> [f64; 6] {
        let x = self.xi;
        [x[0], x[1], x[2], x[3], x[4], self.chi]
    }

    fn with_states(&self, s: &[f64]) -> Self {
        Self {
            lambda: self.lambda,
            xi: [s[0], s[1], s[2], s[3], s[4]],
            chi: s[5],
        }
    }

    /// `dξ2/dt = λ(-V - ξ2)`, equal to `-[λ/(p+λ)] dV/dt` up to a decaying transient.
    pub fn xi2_dot(&self, v: f64) -> f64 {
        self.lambda * (-v - self.xi[1])
    }
}

fn filter_rhs(lambda: f64, s: &[f64], sig: Signals) -> [f64; 6] {
    let xi2_dot = lambda * (-sig.v - s[1]);
    [
        lambda * (sig.i - s[0]),
        xi2_dot,
        lambda * (0.5 * sig.v * sig.v - s[2]),
        lambda * (0.5 * sig.i * sig.i - s[3]),
        lambda * (-sig.v * sig.i_dot - s[4]),
        -lambda * s[5] + sig.i_dot * xi2_dot,
    ]
}

/// Advances the bank one RK4 step with the inputs held at `sig`.
pub fn filter_step(bank: &FilterBank, sig: Signals, dt: f64) -> FilterBank {
    let y = rk4_step(&bank.states(), 0.0, dt, |_, s| Ok(filter_rhs(bank.lambda, s, sig)))
        .expect("filter right-hand side is infallible");
    bank.with_states(&y)
}

/// Advances converter and filters together, so `y` and `Ω` are sampled
/// coherently with the plant. `u` is held over the step.
pub fn co_step(
    params: &PlantParams,
    a: &IVParams,
    state: &PlantState,
    bank: &FilterBank,
    u: f64,
    dt: f64,
) -> Result<(PlantState, FilterBank)> {
    if !(dt > 0.0) {
        return Err(Error::config("dt must be positive"));
    }
    let lambda = bank.lambda;
    let f = bank.states();
    let y0 = [state.v_c, state.i, f[0], f[1], f[2], f[3], f[4], f[5]];
    let mut v_hint = state.v;
    let y = rk4_step(&y0, state.t, dt, |t, y| {
        let v = algebraic_voltage(a, y[1], v_hint).map_err(|e| at_time(e, t))?;
        v_hint = v;
        let [dv_c, di] = converter_rhs(params, u, y[0], y[1], v);
        let fr = filter_rhs(lambda, &y[2..], Signals { v, i: y[1], i_dot: di });
        Ok([dv_c, di, fr[0], fr[1], fr[2], fr[3], fr[4], fr[5]])
    })?;
    let t = state.t + dt;
    let v = algebraic_voltage(a, y[1], v_hint).map_err(|e| at_time(e, t))?;
    Ok((PlantState { v_c: y[0], i: y[1], v, t }, bank.with_states(&y[2..])))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressionSample {
    pub t: f64,
    pub y: f64,
    pub omega: [f64; 5],
    /// False while the filter start-up transient is still present.
    pub valid: bool,
}

impl RegressionSample {
    pub fn prediction(&self, theta: &[f64; 5]) -> f64 {
        self.omega.iter().zip(theta).map(|(o, th)| o * th).sum()
    }

    pub fn residual(&self, theta: &[f64; 5]) -> f64 {
        self.y - self.prediction(theta)
    }

    fn scaled(&self, beta: f64) -> Self {
        Self {
            y: beta * self.y,
            omega: self.omega.map(|o| beta * o),
            ..*self
        }
    }

    pub(crate) fn scaled_row(&self, beta: f64) -> (f64, [f64; 5]) {
        let s = self.scaled(beta);
        (s.y, s.omega)
    }
}

/// Reads `y` and `Ω` off a bank that has been stepped to time `t`.
/// Samples before `5/λ` are flagged invalid.
pub fn emit_sample(bank: &FilterBank, sig: Signals, t: f64) -> RegressionSample {
    let lambda = bank.lambda;
    let x = bank.xi;
    let xi2_dot = bank.xi2_dot(sig.v);
    RegressionSample {
        t,
        y: lambda * (sig.i - x[0]),
        omega: [
            bank.chi - sig.i * xi2_dot,
            xi2_dot,
            lambda * (0.5 * sig.v * sig.v - x[2]),
            lambda * (0.5 * sig.i * sig.i - x[3]),
            -x[4],
        ],
        valid: t >= 5.0 / lambda,
    }
}

/// Regression parameters with the intermediate `b` coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaParams {
    pub theta: [f64; 5],
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
}

impl ThetaParams {
    /// `θ1 θ5 - θ3 θ4`, zero for every θ produced by [`map_a_to_theta`].
    pub fn constraint_defect(&self) -> f64 {
        let t = self.theta;
        t[0] * t[4] - t[2] * t[3]
    }
}

pub fn map_a_to_theta(a: &IVParams) -> ThetaParams {
    let d = 1.0 + a.a5 * a.a4;
    let b1 = (a.a1 + a.a2) / d;
    let b2 = a.a2 / d;
    let b3 = a.a5 / d;
    let den = 1.0 + a.a3 * a.a4 * b1;
    ThetaParams {
        theta: [
            a.a3 / den,
            (a.a3 * b1 + b3) / den,
            a.a3 * b3 / den,
            a.a3 * a.a4 / den,
            a.a3 * a.a4 * b3 / den,
        ],
        b1,
        b2,
        b3,
    }
}

/// Writes `t, y, omega1..omega5`.
pub fn write_samples_csv<W: Write>(out: W, samples: &[RegressionSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "y", "omega1", "omega2", "omega3", "omega4", "omega5"])?;
    for s in samples {
        let mut rec = vec![s.t.to_string(), s.y.to_string()];
        rec.extend(s.omega.iter().map(|o| o.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{control, time_derivative_i, ControlLaw};

    #[test]
    fn dc_gain_is_unity() {
        let mut bank = FilterBank::zeroed(100.0);
        let sig = Signals { v: 0.0, i: 3.0, i_dot: 0.0 };
        for _ in 0..2000 {
            bank = filter_step(&bank, sig, 1e-3);
        }
        assert!((bank.xi[0] - 3.0).abs() < 1e-12);
        assert!((bank.xi[3] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_decay() {
        let x0 = [1.0, -2.0, 3.0, 0.5, -0.25];
        let mut bank = FilterBank { lambda: 100.0, xi: x0, chi: 0.0 };
        let sig = Signals { v: 0.0, i: 0.0, i_dot: 0.0 };
        let dt = 1e-4;
        for _ in 0..300 {
            bank = filter_step(&bank, sig, dt);
        }
        let decay = (-100.0f64 * 0.03).exp();
        for (got, x) in bank.xi.iter().zip(x0) {
            assert!((got - x * decay).abs() < 1e-10 * x.abs());
        }
    }

    #[test]
    fn sinusoid_steady_amplitude() {
        let (lambda, omega, dt) = (100.0, 3.0, 1e-4);
        let mut bank = FilterBank::zeroed(lambda);
        let mut t = 0.0;
        let mut peak: f64 = 0.0;
        let n_period = (2.0 * std::f64::consts::PI / omega / dt) as usize;
        for k in 0..(6 * n_period) {
            // inputs sampled at the step midpoint keep the ZOH phase error symmetric
            let sig = Signals { v: 0.0, i: (omega * (t + 0.5 * dt)).sin(), i_dot: 0.0 };
            bank = filter_step(&bank, sig, dt);
            t += dt;
            if k > 4 * n_period {
                peak = peak.max(bank.xi[0].abs());
            }
        }
        let expected = lambda / (lambda * lambda + omega * omega).sqrt();
        assert!((peak - expected).abs() < 1e-4, "{peak} vs {expected}");
    }

    #[test]
    fn zero_bank_zero_sample() {
        let s = emit_sample(&FilterBank::zeroed(100.0), Signals { v: 0.0, i: 0.0, i_dot: 0.0 }, 1.0);
        assert_eq!(s.y, 0.0);
        assert_eq!(s.omega, [0.0; 5]);
        assert!(s.valid);
        let early = emit_sample(&FilterBank::zeroed(100.0), Signals { v: 0.0, i: 0.0, i_dot: 0.0 }, 0.01);
        assert!(!early.valid);
    }

    #[test]
    fn theta_collapse_without_series_resistance() {
        let a = IVParams { a1: 500.0, a2: 1e-6, a3: 0.02, a4: 0.0, a5: 0.04 };
        let th = map_a_to_theta(&a).theta;
        assert_eq!(th[3], 0.0);
        assert_eq!(th[4], 0.0);
        assert!((th[0] - a.a3).abs() < 1e-18);
        assert!((th[2] - a.a3 * a.a5).abs() < 1e-18);
        assert!((th[1] - (a.a3 * (a.a1 + a.a2) + a.a5)).abs() < 1e-12);
    }

    #[test]
    fn theta_for_reference_array() {
        let th = map_a_to_theta(&IVParams::REFERENCE_ARRAY);
        assert!((th.b1 - 724.5).abs() < 0.1);
        let den = 1.0 + 0.0231 * 0.0732 * th.b1;
        assert!((den - 2.225).abs() < 1e-3);
        assert!((th.theta[0] - 1.04e-2).abs() < 5e-5, "{}", th.theta[0]);
        // closed form over the common denominator
        let a = IVParams::REFERENCE_ARRAY;
        let d = 1.0 + a.a4 * a.a5 + a.a3 * a.a4 * (a.a1 + a.a2);
        let closed = [
            a.a3 * (1.0 + a.a4 * a.a5) / d,
            (a.a5 + a.a3 * (a.a1 + a.a2)) / d,
            a.a3 * a.a5 / d,
            a.a3 * a.a4 * (1.0 + a.a4 * a.a5) / d,
            a.a3 * a.a4 * a.a5 / d,
        ];
        for (x, y) in th.theta.iter().zip(closed) {
            assert!(((x - y) / y).abs() < 1e-14);
        }
    }

    #[test]
    fn regression_holds_on_simulated_trajectory() {
        let a = IVParams::REFERENCE_ARRAY;
        let p = PlantParams::default();
        let law = ControlLaw::two_tone();
        let theta = map_a_to_theta(&a).theta;
        let dt = 1e-4;
        let mut s = PlantState::initial(&p, &a, control(&law, 0.0).unwrap()).unwrap();
        let u0 = control(&law, 0.0).unwrap();
        let mut bank = FilterBank::at_rest(
            100.0,
            Signals { v: s.v, i: s.i, i_dot: time_derivative_i(&p, &s, u0) },
        );
        let mut worst: f64 = 0.0;
        let mut y_max: f64 = 0.0;
        for _ in 0..10_000 {
            let u = control(&law, s.t).unwrap();
            let (ns, nb) = co_step(&p, &a, &s, &bank, u, dt).unwrap();
            s = ns;
            bank = nb;
            let sig = Signals { v: s.v, i: s.i, i_dot: time_derivative_i(&p, &s, u) };
            let sample = emit_sample(&bank, sig, s.t);
            if s.t > 0.05 {
                worst = worst.max(sample.residual(&theta).abs());
                y_max = y_max.max(sample.y.abs());
            }
        }
        assert!(worst < 1e-4 * y_max, "residual {worst} vs max|y| {y_max}");
    }

    #[test]
    fn csv_layout() {
        let s = RegressionSample { t: 0.5, y: 1.0, omega: [1.0, 2.0, 3.0, 4.0, 5.0], valid: true };
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &[s]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "t,y,omega1,omega2,omega3,omega4,omega5");
        assert_eq!(text.lines().nth(1).unwrap(), "0.5,1,1,2,3,4,5");
    }
}
