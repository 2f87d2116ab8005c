//! Scenario configuration: TOML with dotted section names, plus built-in presets.

use serde::{Deserialize, Serialize};

use crate::drem::DremConfig;
use crate::error::{Error, Result};
use crate::mpp::StationarityForm;
use crate::plant::{ControlLaw, PlantParams};
use crate::pv_model::{env_params, BandGap, EnvironmentState, IVParams, PhysicalConstants, ReferenceParams};
use crate::recovery::RecoveryGuards;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub sim: SimConfig,
    pub plant: PlantParams,
    pub control: ControlLaw,
    pub truth: TruthConfig,
    pub environment: EnvironmentProfile,
    pub regressor: RegressorConfig,
    pub drem: DremConfig,
    pub estimator: EstimatorConfig,
    pub recovery: RecoveryConfig,
    pub observer: ObserverConfig,
    pub metrics: MetricsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// s
    pub dt: f64,
    /// s
    pub horizon: f64,
    /// Simulated time between logged rows, s.
    pub log_interval: f64,
    /// Log every step instead of every `log_interval`.
    #[serde(default)]
    pub log_full: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthMode {
    /// Fixed lumped parameters from `truth.tabulated`.
    Tabulated,
    /// Parameters generated from the reference array and the environment.
    Environment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    pub mode: TruthMode,
    pub tabulated: IVParams,
    pub reference: ReferenceParams,
    #[serde(default)]
    pub band_gap: BandGap,
}

/// Temperature (K) and irradiance (W/m²) starting values with linear ramps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentProfile {
    pub temperature: f64,
    pub irradiance: f64,
    /// Total temperature change over the ramp, K.
    #[serde(default)]
    pub temperature_rise: f64,
    /// Total irradiance change over the ramp, W/m².
    #[serde(default)]
    pub irradiance_rise: f64,
    #[serde(default)]
    pub ramp_start: f64,
    #[serde(default = "default_ramp_duration")]
    pub ramp_duration: f64,
}

fn default_ramp_duration() -> f64 {
    100.0
}

impl EnvironmentProfile {
    pub fn is_constant(&self) -> bool {
        self.temperature_rise == 0.0 && self.irradiance_rise == 0.0
    }

    pub fn at(&self, t: f64) -> EnvironmentState {
        let s = ((t - self.ramp_start) / self.ramp_duration).clamp(0.0, 1.0);
        EnvironmentState {
            temperature: self.temperature + s * self.temperature_rise,
            irradiance: self.irradiance + s * self.irradiance_rise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorConfig {
    /// Filter pole, 1/s.
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// θ̂1..θ̂4 at t = 0; θ̂5 is completed from the constraint.
    pub theta0: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryConfig {
    pub guards: RecoveryGuards,
    /// Pole of the operating-point smoother, 1/s; absent means instantaneous.
    #[serde(default)]
    pub smoothing_pole: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    pub gamma_v: f64,
    pub v_hat0: f64,
    #[serde(default)]
    pub form: StationarityForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Relative parameter error defining the convergence time.
    pub param_threshold: f64,
    /// Band on |V̂ - V*| defining the observer settling time, V.
    pub voltage_band: f64,
    /// Trailing window for the excitation verdict, s.
    pub excitation_window: f64,
    /// Minimum growth of ∫Δ² over the window to count as excited.
    pub excitation_floor: f64,
}

pub const PRESETS: &[&str] = &["paper-sec8", "temperature-ramp", "combined-ramp"];

impl ScenarioConfig {
    /// Constant environment with the tabulated parameter vector.
    pub fn paper_sec8() -> Self {
        Self {
            name: "paper-sec8".into(),
            sim: SimConfig { dt: 1e-4, horizon: 20.0, log_interval: 1e-3, log_full: false },
            plant: PlantParams::default(),
            control: ControlLaw::two_tone(),
            truth: TruthConfig {
                mode: TruthMode::Tabulated,
                tabulated: IVParams::REFERENCE_ARRAY,
                reference: ReferenceParams::ARRAY_1440X400,
                band_gap: BandGap::Rational,
            },
            environment: EnvironmentProfile {
                temperature: ReferenceParams::ARRAY_1440X400.t_ref,
                irradiance: ReferenceParams::ARRAY_1440X400.g_ref,
                temperature_rise: 0.0,
                irradiance_rise: 0.0,
                ramp_start: 0.0,
                ramp_duration: default_ramp_duration(),
            },
            regressor: RegressorConfig { lambda: 100.0 },
            drem: DremConfig::default(),
            estimator: EstimatorConfig { theta0: [0.01, 0.006, 0.009, 0.001] },
            recovery: RecoveryConfig { guards: RecoveryGuards::default(), smoothing_pole: None },
            observer: ObserverConfig { gamma_v: 0.5, v_hat0: 0.0, form: StationarityForm::OnCurve },
            metrics: MetricsConfig {
                param_threshold: 0.01,
                voltage_band: 1.0,
                excitation_window: 1.0,
                excitation_floor: 1e-30,
            },
        }
    }

    /// Environment-generated truth with a linear 4 K temperature ramp.
    pub fn temperature_ramp() -> Self {
        let mut c = Self::ramp_base("temperature-ramp");
        c.environment.temperature_rise = 4.0;
        c
    }

    /// 6 K temperature and 5 W/m² irradiance ramps together.
    pub fn combined_ramp() -> Self {
        let mut c = Self::ramp_base("combined-ramp");
        c.environment.temperature_rise = 6.0;
        c.environment.irradiance_rise = 5.0;
        c
    }

    fn ramp_base(name: &str) -> Self {
        let mut c = Self::paper_sec8();
        c.name = name.into();
        c.truth.mode = TruthMode::Environment;
        c.sim.horizon = 100.0;
        c.sim.log_interval = 1e-2;
        c.estimator.theta0 = [0.01, 0.004, 0.006, 0.002];
        c.drem.gains = [0.5; 5];
        c.observer.gamma_v = 0.02;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper-sec8" => Ok(Self::paper_sec8()),
            "temperature-ramp" => Ok(Self::temperature_ramp()),
            "combined-ramp" => Ok(Self::combined_ramp()),
            other => Err(Error::config(format!(
                "unknown preset {other:?}; available: {}",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Parses a full configuration, or overrides on top of `base` when given.
    pub fn from_toml(text: &str, base: Option<&ScenarioConfig>) -> Result<Self> {
        let patch: toml::Value = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let cfg = match base {
            Some(b) => {
                let mut value = toml::Value::try_from(b).map_err(|e| Error::config(e.to_string()))?;
                merge(&mut value, patch);
                value.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?
            }
            None => patch.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?,
        };
        let cfg: ScenarioConfig = cfg;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Sets one dotted key (`drem.gains`, `observer.gamma_v`, ...) from a TOML literal.
    pub fn with_override(&self, key: &str, literal: &str) -> Result<Self> {
        let parsed: toml::Value = toml::from_str(&format!("v = {literal}"))
            .map_err(|e| Error::config(format!("bad value for {key}: {e}")))?;
        let mut leaf = parsed.get("v").cloned().ok_or_else(|| Error::config("empty value"))?;
        for part in key.rsplit('.') {
            let mut table = toml::map::Map::new();
            table.insert(part.to_string(), leaf);
            leaf = toml::Value::Table(table);
        }
        let mut value = toml::Value::try_from(self).map_err(|e| Error::config(e.to_string()))?;
        if !has_path(&value, key) {
            return Err(Error::config(format!("unknown key {key}")));
        }
        merge(&mut value, leaf);
        let cfg: ScenarioConfig = value.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sim;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(Error::config("sim.dt must be positive"));
        }
        if !(s.log_interval >= s.dt) {
            return Err(Error::config("sim.log_interval must be at least sim.dt"));
        }
        self.plant.validate()?;
        self.drem.validate()?;
        self.truth.reference.validate()?;
        if !(self.regressor.lambda > 0.0) {
            return Err(Error::config("regressor.lambda must be positive"));
        }
        let warm_up = 5.0 / self.regressor.lambda;
        if !(s.horizon > self.drem.max_delay() + warm_up) {
            return Err(Error::config(format!(
                "sim.horizon must exceed the longest delay plus filter warm-up ({} s)",
                self.drem.max_delay() + warm_up
            )));
        }
        let (lo, hi) = self.control.range();
        if !(lo > 0.0 && hi <= 1.0) {
            return Err(Error::config(format!("control law leaves (0, 1]: range [{lo}, {hi}]")));
        }
        if !(self.observer.gamma_v > 0.0) || !(self.observer.v_hat0 >= 0.0) {
            return Err(Error::config("observer.gamma_v must be positive and observer.v_hat0 non-negative"));
        }
        if self.estimator.theta0[0] == 0.0 {
            return Err(Error::config("estimator.theta0[0] must be non-zero"));
        }
        if let Some(p) = self.recovery.smoothing_pole {
            if !(p > 0.0) {
                return Err(Error::config("recovery.smoothing_pole must be positive"));
            }
        }
        if !(self.recovery.guards.eps_denominator > 0.0) {
            return Err(Error::config("recovery.guards.eps_denominator must be positive"));
        }
        if self.truth.mode == TruthMode::Tabulated && !self.environment.is_constant() {
            return Err(Error::config("environment ramps need truth.mode = \"environment\""));
        }
        Ok(())
    }

    /// True parameters at time `t`.
    pub fn truth_at(&self, t: f64) -> Result<IVParams> {
        match self.truth.mode {
            TruthMode::Tabulated => Ok(self.truth.tabulated),
            TruthMode::Environment => env_params(
                &self.truth.reference,
                &self.environment.at(t),
                self.truth.band_gap,
                &PhysicalConstants::STANDARD,
            ),
        }
    }
}

fn merge(base: &mut toml::Value, patch: toml::Value) {
    match (base, patch) {
        (toml::Value::Table(b), toml::Value::Table(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn has_path(value: &toml::Value, key: &str) -> bool {
    let mut cur = value;
    for part in key.split('.') {
        match cur.get(part) {
            Some(next) => cur = next,
            None => return false,
        }
    }
    true
}
