//! Dynamic regressor extension and mixing.
//!
//! The scalar regression `y = Ω^T θ` is stacked with four scaled, delayed
//! copies of itself into `Y_e = M_e θ`. Premultiplying by `adj(M_e)` yields
//! five decoupled scalar regressions `Y_i = Δ θ_i` with `Δ = det(M_e)`, each
//! estimated by its own gradient law
//! `dθ̂_i/dt = -γ_i Δ (Δ θ̂_i - Y_i)`. The errors obey
//! `θ̃_i(t) = θ̃_i(0) exp(-γ_i ∫Δ²)`, so they vanish iff `Δ` is not
//! square-integrable.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{adjugate, det, mat_vec, Mat5};
use crate::regressor::RegressionSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DremConfig {
    /// Strictly increasing delays d1..d4, s.
    pub delays: [f64; 4],
    /// Scaling applied to the delayed rows.
    pub beta: f64,
    pub gains: [f64; 5],
    /// Divide every column of `M_e` by its largest magnitude before mixing.
    #[serde(default)]
    pub equilibrate_columns: bool,
    #[serde(default)]
    pub integration: EstimatorIntegration,
}

/// Discretisation of the scalar gradient laws over one sample period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorIntegration {
    /// Exact solution with `(Δ, Y)` held over the step.
    #[default]
    ExactHold,
    /// Explicit Euler with step halving while `γ Δ² h ≥` [`STEP_SAFETY`].
    Euler,
}

impl Default for DremConfig {
    fn default() -> Self {
        Self {
            delays: [0.1, 0.2, 0.3, 0.4],
            beta: 1.25e-3,
            gains: [20.0; 5],
            equilibrate_columns: false,
            integration: EstimatorIntegration::ExactHold,
        }
    }
}

impl DremConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delays[0] > 0.0) || self.delays.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config(format!(
                "drem.delays must satisfy 0 < d1 < d2 < d3 < d4, got {:?}",
                self.delays
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config("drem.beta must be positive"));
        }
        if self.gains.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::config("drem.gains must be positive"));
        }
        Ok(())
    }

    pub fn max_delay(&self) -> f64 {
        self.delays[3]
    }
}

/// Fixed-rate history of regression samples with interpolated lookup.
#[derive(Debug, Clone)]
pub struct DelayLine {
    dt: f64,
    capacity: usize,
    buf: VecDeque<RegressionSample>,
}

impl DelayLine {
    pub fn new(dt: f64, max_delay: f64) -> Self {
        let capacity = (max_delay / dt).ceil() as usize + 2;
        Self {
            dt,
            capacity,
            buf: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Samples must arrive once per `dt`.
    pub fn push(&mut self, sample: RegressionSample) {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(sample);
    }

    pub fn latest(&self) -> Option<&RegressionSample> {
        self.buf.back()
    }

    /// Sample `delay` seconds before the latest one, linearly interpolated
    /// between the two neighbouring stored samples. `None` if the history is
    /// too short or either neighbour is flagged invalid.
    pub fn lookup(&self, delay: f64) -> Option<RegressionSample> {
        let newest = self.buf.len().checked_sub(1)?;
        let steps = delay / self.dt;
        let near = steps.round();
        let (back, frac) = if (steps - near).abs() < 1e-9 {
            (near as usize, 0.0)
        } else {
            (steps.floor() as usize, steps - steps.floor())
        };
        let idx = newest.checked_sub(back)?;
        let s0 = self.buf[idx];
        if frac == 0.0 {
            return s0.valid.then_some(s0);
        }
        let s1 = self.buf[idx.checked_sub(1)?];
        if !(s0.valid && s1.valid) {
            return None;
        }
        let mix = |x0: f64, x1: f64| (1.0 - frac) * x0 + frac * x1;
        let mut omega = [0.0; 5];
        for (k, o) in omega.iter_mut().enumerate() {
            *o = mix(s0.omega[k], s1.omega[k]);
        }
        Some(RegressionSample {
            t: mix(s0.t, s1.t),
            y: mix(s0.y, s1.y),
            omega,
            valid: true,
        })
    }
}

/// Extended regression `Y_e = M_e θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extended {
    pub ye: [f64; 5],
    pub me: Mat5,
}

/// Stacks the current sample with the four delayed, β-scaled ones.
/// `None` means not ready yet; the estimator then holds.
pub fn build_extended(sample: &RegressionSample, line: &DelayLine, cfg: &DremConfig) -> Option<Extended> {
    if !sample.valid {
        return None;
    }
    let mut ye = [0.0; 5];
    let mut me = [[0.0; 5]; 5];
    ye[0] = sample.y;
    me[0] = sample.omega;
    for (j, d) in cfg.delays.iter().enumerate() {
        let (y, omega) = line.lookup(*d)?.scaled_row(cfg.beta);
        ye[j + 1] = y;
        me[j + 1] = omega;
    }
    Some(Extended { ye, me })
}

/// `Δ = det(M_e)` and `Y = adj(M_e) Y_e`.
pub fn mix(ext: &Extended) -> (f64, [f64; 5]) {
    let adj = adjugate(&ext.me);
    (det(&ext.me), mat_vec(&adj, &ext.ye))
}

/// Mixing after scaling column `k` of `M_e` by `1/s_k` (`s_k` its largest
/// magnitude). The mixed regression then holds for `s_k θ_k`, so `Y` is
/// mapped back by `1/s_k` and `Δ` carries the product of scales.
pub fn mix_equilibrated(ext: &Extended) -> (f64, [f64; 5]) {
    let mut scale = [1.0; 5];
    let mut me = ext.me;
    for (k, s) in scale.iter_mut().enumerate() {
        let m = (0..5).map(|r| me[r][k].abs()).fold(0.0, f64::max);
        if m > 0.0 {
            *s = m;
            for row in me.iter_mut() {
                row[k] /= m;
            }
        }
    }
    let adj = adjugate(&me);
    let delta = det(&me);
    let mut y = mat_vec(&adj, &ext.ye);
    for (yk, s) in y.iter_mut().zip(scale) {
        *yk /= s;
    }
    (delta, y)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorState {
    pub theta_hat: [f64; 5],
    /// `∫ Δ² dt` so far.
    pub excitation_integral: f64,
    pub last_delta: f64,
    pub t: f64,
    /// Number of times the step had to be shortened for stability.
    pub step_reductions: u64,
    #[serde(skip)]
    history: VecDeque<(f64, f64)>,
    #[serde(skip)]
    history_span: f64,
}

impl EstimatorState {
    /// `history_span` bounds how far back [`excitation_verdict`] can look.
    pub fn new(theta0: [f64; 5], history_span: f64) -> Self {
        let mut history = VecDeque::new();
        history.push_back((0.0, 0.0));
        Self {
            theta_hat: theta0,
            excitation_integral: 0.0,
            last_delta: 0.0,
            t: 0.0,
            step_reductions: 0,
            history,
            history_span,
        }
    }

    /// Starts from four components and completes the fifth with
    /// `θ5 = θ3 θ4 / θ1`, which every attainable θ satisfies.
    pub fn from_four(theta0: [f64; 4], history_span: f64) -> Result<Self> {
        if theta0[0] == 0.0 {
            return Err(Error::config("initial θ1 must be non-zero"));
        }
        let t5 = theta0[2] * theta0[3] / theta0[0];
        Ok(Self::new([theta0[0], theta0[1], theta0[2], theta0[3], t5], history_span))
    }

    /// Advances the clock without an update (estimator not ready).
    pub fn idle(&mut self, dt: f64) {
        self.t += dt;
        self.last_delta = 0.0;
        self.record();
    }

    fn record(&mut self) {
        self.history.push_back((self.t, self.excitation_integral));
        while let Some(&(t0, _)) = self.history.get(1) {
            if self.t - t0 > self.history_span {
                self.history.pop_front();
            } else {
                break;
            }
        }
    }

    /// Integral value at time `t` (step-wise; earliest retained value if older).
    fn integral_at(&self, t: f64) -> f64 {
        let idx = self.history.partition_point(|(ts, _)| *ts <= t);
        match idx {
            0 => self.history.front().map_or(0.0, |h| h.1),
            i => self.history[i - 1].1,
        }
    }
}

/// Bound on `γ Δ² h` for the explicit Euler update.
pub const STEP_SAFETY: f64 = 0.5;

/// `(1 - e^(-x)) / x`, continuous at zero.
fn relative_decay(x: f64) -> f64 {
    if x < 1e-8 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

/// Advances the five scalar laws by `dt` with `(Δ, Y)` held.
///
/// [`EstimatorIntegration::ExactHold`] moves each `θ̂_i` to
/// `Y_i/Δ + (θ̂_i - Y_i/Δ) e^(-γ_i Δ² dt)` without dividing by `Δ`.
/// [`EstimatorIntegration::Euler`] halves its step while `γ_i Δ² h` exceeds
/// [`STEP_SAFETY`]; the clock still advances by `dt`.
pub fn estimator_step(state: &mut EstimatorState, delta: f64, y: &[f64; 5], cfg: &DremConfig, dt: f64) {
    let d2 = delta * delta;
    match cfg.integration {
        EstimatorIntegration::ExactHold => {
            for ((th, gain), yi) in state.theta_hat.iter_mut().zip(cfg.gains).zip(y) {
                let x = gain * d2 * dt;
                *th -= relative_decay(x) * gain * dt * delta * (delta * *th - yi);
            }
        }
        EstimatorIntegration::Euler => {
            let g_max = cfg.gains.iter().cloned().fold(0.0, f64::max);
            let mut h = dt;
            while g_max * d2 * h >= STEP_SAFETY && h > 0.0 {
                h *= 0.5;
                state.step_reductions += 1;
            }
            for ((th, gain), yi) in state.theta_hat.iter_mut().zip(cfg.gains).zip(y) {
                *th -= h * gain * delta * (delta * *th - yi);
            }
        }
    }
    state.excitation_integral += d2 * dt;
    state.last_delta = delta;
    state.t += dt;
    state.record();
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Excitation {
    Excited,
    Marginal,
    Unexcited,
}

/// Classifies the growth of `∫Δ²` over the trailing `window`: above `floor`
/// is excited, below `1e-3 floor` unexcited.
pub fn excitation_verdict(state: &EstimatorState, window: f64, floor: f64) -> Excitation {
    let growth = state.excitation_integral - state.integral_at(state.t - window);
    if growth > floor {
        Excitation::Excited
    } else if growth < 1e-3 * floor {
        Excitation::Unexcited
    } else {
        Excitation::Marginal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorRecord {
    pub t: f64,
    pub delta: f64,
    pub excitation_integral: f64,
    pub theta_hat: [f64; 5],
}

impl From<&EstimatorState> for EstimatorRecord {
    fn from(s: &EstimatorState) -> Self {
        Self {
            t: s.t,
            delta: s.last_delta,
            excitation_integral: s.excitation_integral,
            theta_hat: s.theta_hat,
        }
    }
}

/// Writes `t, delta, excitation_integral, theta_hat1..theta_hat5`.
pub fn write_estimator_csv<W: Write>(out: W, records: &[EstimatorRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t",
        "delta",
        "excitation_integral",
        "theta_hat1",
        "theta_hat2",
        "theta_hat3",
        "theta_hat4",
        "theta_hat5",
    ])?;
    for r in records {
        let mut rec = vec![r.t.to_string(), r.delta.to_string(), r.excitation_integral.to_string()];
        rec.extend(r.theta_hat.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
