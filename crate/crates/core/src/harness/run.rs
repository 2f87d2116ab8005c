//! Closed-loop scenario execution.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::config::ScenarioConfig;
use crate::drem::{
    build_extended, estimator_step, excitation_verdict, mix, mix_equilibrated, DelayLine, EstimatorRecord,
    EstimatorState, Excitation,
};
use crate::error::{Error, Result};
use crate::mpp::{brute_force_mpp, observer_step, stationarity, MppObserver, MppParams, ObserverRecord};
use crate::plant::{control, time_derivative_i, PlantState};
use crate::pv_model::{open_circuit_voltage, IVParams};
use crate::recovery::{map_theta_to_a, PointSmoother};
use crate::regressor::{co_step, emit_sample, FilterBank, RegressionSample, Signals};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlantRecord {
    pub t: f64,
    pub u: f64,
    pub v: f64,
    pub i: f64,
    pub v_c: f64,
    pub i_dot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamRecord {
    pub t: f64,
    /// Zero until the first successful recovery.
    pub a_hat: [f64; 5],
    pub a_true: [f64; 5],
    pub abs_error: f64,
    pub rel_error: f64,
}

/// Everything logged during a run, decimated to `sim.log_interval`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Series {
    pub plant: Vec<PlantRecord>,
    pub params: Vec<ParamRecord>,
    pub regression: Vec<RegressionSample>,
    pub estimator: Vec<EstimatorRecord>,
    /// `h_v_hat` is zero while the observer idles.
    pub observer: Vec<ObserverRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub name: String,
    pub horizon: f64,
    pub final_param_error_abs: f64,
    pub final_param_error_rel: f64,
    pub final_voltage_error: f64,
    /// First logged time after which the relative error stays below the threshold.
    pub param_convergence_time: Option<f64>,
    /// First logged time after which `|V̂ - V*|` stays inside the band.
    pub voltage_settling_time: Option<f64>,
    pub excitation: Excitation,
    pub excitation_integral: f64,
    pub estimator_step_reductions: u64,
    pub observer_step_reductions: u64,
    pub recovery_holds: u64,
    /// Time the observer started moving, s.
    pub observer_start: Option<f64>,
    pub a_hat_final: [f64; 5],
    pub a_true_final: [f64; 5],
    pub v_hat_final: f64,
    pub v_star_final: f64,
    pub signal_ranges: BTreeMap<String, [f64; 2]>,
}

impl RunMetrics {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub metrics: RunMetrics,
    pub series: Series,
}

/// A failed run keeps whatever was logged before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub t: f64,
    pub partial: Box<Series>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run failed at t = {} s: {}", self.t, self.error)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    series: Series,
    state: PlantState,
    bank: FilterBank,
    line: DelayLine,
    estimator: EstimatorState,
    smoother: Option<PointSmoother>,
    observer: MppObserver,
    a_hat: Option<IVParams>,
    holds: u64,
    observer_start: Option<f64>,
    v_star_constant: Option<f64>,
    estimator_ready: bool,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let a0 = cfg.truth_at(0.0)?;
        let u0 = control(&cfg.control, 0.0)?;
        let state = PlantState::initial(&cfg.plant, &a0, u0)?;
        let bank = FilterBank::at_rest(
            cfg.regressor.lambda,
            Signals { v: state.v, i: state.i, i_dot: time_derivative_i(&cfg.plant, &state, u0) },
        );
        let v_star_constant = if cfg.environment.is_constant() || cfg.truth.mode == super::config::TruthMode::Tabulated {
            Some(v_star(&a0)?)
        } else {
            None
        };
        Ok(Self {
            cfg,
            series: Series::default(),
            state,
            bank,
            line: DelayLine::new(cfg.sim.dt, cfg.drem.max_delay()),
            estimator: EstimatorState::from_four(cfg.estimator.theta0, cfg.metrics.excitation_window)?,
            smoother: cfg.recovery.smoothing_pole.map(PointSmoother::new),
            observer: MppObserver::new(cfg.observer.v_hat0, cfg.observer.gamma_v),
            a_hat: None,
            holds: 0,
            observer_start: None,
            v_star_constant,
            estimator_ready: false,
        })
    }

    fn step(&mut self, k: u64) -> Result<()> {
        let cfg = self.cfg;
        let dt = cfg.sim.dt;
        let t = k as f64 * dt;
        let a = cfg.truth_at(t)?;
        let u = control(&cfg.control, t)?;
        let (mut next, bank) = co_step(&cfg.plant, &a, &self.state, &self.bank, u, dt)?;
        // keep the clock on the integer grid
        next.t = (k + 1) as f64 * dt;
        self.state = next;
        self.bank = bank;
        let i_dot = time_derivative_i(&cfg.plant, &self.state, u);
        let sig = Signals { v: self.state.v, i: self.state.i, i_dot };
        let sample = emit_sample(&self.bank, sig, self.state.t);
        self.line.push(sample);

        match build_extended(&sample, &self.line, &cfg.drem) {
            Some(ext) => {
                let (delta, y) = if cfg.drem.equilibrate_columns { mix_equilibrated(&ext) } else { mix(&ext) };
                if !(delta.is_finite() && y.iter().all(|x| x.is_finite())) {
                    return Err(Error::NonFinite("mixed regression"));
                }
                estimator_step(&mut self.estimator, delta, &y, &cfg.drem, dt);
                self.estimator_ready = true;
            }
            None => self.estimator.idle(dt),
        }

        let (v_op, i_op) = match self.smoother.as_mut() {
            Some(s) => s.update(self.state.v, self.state.i, dt),
            None => (self.state.v, self.state.i),
        };
        let th = self.estimator.theta_hat;
        match map_theta_to_a(&[th[0], th[1], th[2], th[3]], v_op, i_op, &cfg.recovery.guards) {
            Ok(est) if est.norm().is_finite() => self.a_hat = Some(est),
            _ => self.holds += 1,
        }

        if self.estimator_ready {
            if let Some(p) = self.a_hat.map(|a| MppParams::from_iv(&a)).filter(MppParams::is_positive) {
                observer_step(&mut self.observer, &p, cfg.observer.form, dt);
                self.observer_start.get_or_insert(self.state.t);
            }
        }
        Ok(())
    }

    fn log(&mut self, u: f64) -> Result<()> {
        let t = self.state.t;
        let a = self.cfg.truth_at(t)?;
        let s = &self.state;
        self.series.plant.push(PlantRecord {
            t,
            u,
            v: s.v,
            i: s.i,
            v_c: s.v_c,
            i_dot: time_derivative_i(&self.cfg.plant, s, u),
        });
        let a_hat = self.a_hat.map_or([0.0; 5], |x| x.to_array());
        let a_hat_p = IVParams::from_array(a_hat);
        let abs_error = a.distance(&a_hat_p);
        self.series.params.push(ParamRecord {
            t,
            a_hat,
            a_true: a.to_array(),
            abs_error,
            rel_error: abs_error / a.norm(),
        });
        if let Some(sample) = self.line.latest() {
            self.series.regression.push(*sample);
        }
        self.series.estimator.push(EstimatorRecord::from(&self.estimator));
        let v_star_true = match self.v_star_constant {
            Some(v) => v,
            None => v_star(&a)?,
        };
        let h = match (self.observer_start, self.a_hat) {
            (Some(_), Some(est)) => {
                let h = stationarity(&MppParams::from_iv(&est), self.observer.v_hat, self.cfg.observer.form);
                if h.value.is_finite() { h.value } else { 0.0 }
            }
            _ => 0.0,
        };
        self.series.observer.push(ObserverRecord {
            t,
            v_hat: self.observer.v_hat,
            v_star_true,
            h_v_hat: h,
        });
        Ok(())
    }
}

fn v_star(a: &IVParams) -> Result<f64> {
    Ok(brute_force_mpp(a, open_circuit_voltage(a)?, 64)?.v)
}

/// Runs one scenario. Same configuration, bit-identical series.
pub fn run(cfg: &ScenarioConfig) -> std::result::Result<RunReport, RunFailure> {
    let fail = |error: Error, t: f64, series: Series| RunFailure { error, t, partial: Box::new(series) };
    let mut runner = Runner::new(cfg).map_err(|e| fail(e, 0.0, Series::default()))?;
    let dt = cfg.sim.dt;
    let steps = (cfg.sim.horizon / dt).round() as u64;
    let every = if cfg.sim.log_full { 1 } else { ((cfg.sim.log_interval / dt).round() as u64).max(1) };
    let mut logged = runner.log(control(&cfg.control, 0.0).unwrap_or(f64::NAN));
    for k in 0..steps {
        if let Err(e) = logged {
            return Err(fail(e, runner.state.t, runner.series));
        }
        let u = control(&cfg.control, k as f64 * dt).unwrap_or(f64::NAN);
        if let Err(e) = runner.step(k) {
            return Err(fail(e, runner.state.t, runner.series));
        }
        logged = if (k + 1) % every == 0 || k + 1 == steps { runner.log(u) } else { Ok(()) };
    }
    if let Err(e) = logged {
        return Err(fail(e, runner.state.t, runner.series));
    }
    let metrics = compute_metrics(cfg, &runner);
    Ok(RunReport { config: cfg.clone(), metrics, series: runner.series })
}

/// Earliest logged time after which `bad` never holds again; `None` if it
/// holds at the last row.
fn settle_time<T>(rows: &[T], time: impl Fn(&T) -> f64, bad: impl Fn(&T) -> bool) -> Option<f64> {
    match rows.iter().rposition(bad) {
        None => rows.first().map(&time),
        Some(last) if last + 1 < rows.len() => Some(time(&rows[last + 1])),
        Some(_) => None,
    }
}

fn range(values: impl Iterator<Item = f64>) -> [f64; 2] {
    values.fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], x| [lo.min(x), hi.max(x)])
}

fn compute_metrics(cfg: &ScenarioConfig, runner: &Runner<'_>) -> RunMetrics {
    let s = &runner.series;
    let last_p = s.params.last().copied().expect("at least one logged row");
    let last_o = s.observer.last().copied().expect("at least one logged row");
    let band = cfg.metrics.voltage_band;
    let thr = cfg.metrics.param_threshold;
    let mut ranges = BTreeMap::new();
    ranges.insert("u".to_string(), range(s.plant.iter().map(|r| r.u)));
    ranges.insert("v".to_string(), range(s.plant.iter().map(|r| r.v)));
    ranges.insert("i".to_string(), range(s.plant.iter().map(|r| r.i)));
    ranges.insert("v_c".to_string(), range(s.plant.iter().map(|r| r.v_c)));
    ranges.insert("delta".to_string(), range(s.estimator.iter().map(|r| r.delta)));
    ranges.insert("v_hat".to_string(), range(s.observer.iter().map(|r| r.v_hat)));
    ranges.insert("v_star_true".to_string(), range(s.observer.iter().map(|r| r.v_star_true)));
    RunMetrics {
        name: cfg.name.clone(),
        horizon: cfg.sim.horizon,
        final_param_error_abs: last_p.abs_error,
        final_param_error_rel: last_p.rel_error,
        final_voltage_error: (last_o.v_hat - last_o.v_star_true).abs(),
        param_convergence_time: settle_time(&s.params, |r| r.t, |r| !(r.rel_error < thr)),
        voltage_settling_time: settle_time(&s.observer, |r| r.t, |r| !((r.v_hat - r.v_star_true).abs() <= band)),
        excitation: excitation_verdict(&runner.estimator, cfg.metrics.excitation_window, cfg.metrics.excitation_floor),
        excitation_integral: runner.estimator.excitation_integral,
        estimator_step_reductions: runner.estimator.step_reductions,
        observer_step_reductions: runner.observer.step_reductions,
        recovery_holds: runner.holds,
        observer_start: runner.observer_start,
        a_hat_final: last_p.a_hat,
        a_true_final: last_p.a_true,
        v_hat_final: last_o.v_hat,
        v_star_final: last_o.v_star_true,
        signal_ranges: ranges,
    }
}
