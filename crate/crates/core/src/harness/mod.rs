//! Scenario configuration, closed-loop runs, parameter sweeps and output files.

pub mod config;
pub mod output;
pub mod run;
pub mod sweep;

pub use config::{ScenarioConfig, PRESETS};
pub use run::{run, RunFailure, RunMetrics, RunReport, Series};
pub use sweep::{sweep, SweepRow};
