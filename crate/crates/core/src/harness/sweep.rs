//! Parallel sweeps over scenario variants.

use rayon::prelude::*;
use serde::Serialize;

use super::config::ScenarioConfig;
use super::run::{run, RunMetrics};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub label: String,
    pub metrics: Option<RunMetrics>,
    pub error: Option<String>,
}

/// Runs every configuration; a failing run only affects its own row.
pub fn sweep(configs: &[(String, ScenarioConfig)]) -> Vec<SweepRow> {
    configs
        .par_iter()
        .map(|(label, cfg)| match run(cfg) {
            Ok(report) => SweepRow { label: label.clone(), metrics: Some(report.metrics), error: None },
            Err(f) => SweepRow { label: label.clone(), metrics: None, error: Some(f.to_string()) },
        })
        .collect()
}

/// One configuration per value of a dotted key.
pub fn vary(base: &ScenarioConfig, key: &str, literals: &[&str]) -> crate::Result<Vec<(String, ScenarioConfig)>> {
    literals
        .iter()
        .map(|lit| {
            let mut cfg = base.with_override(key, lit)?;
            cfg.name = format!("{}[{key}={lit}]", base.name);
            Ok((format!("{key}={lit}"), cfg))
        })
        .collect()
}

/// Writes the comparison table as CSV.
pub fn write_sweep_csv<W: std::io::Write>(out: W, rows: &[SweepRow]) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "label",
        "final_param_error_rel",
        "final_voltage_error",
        "param_convergence_time",
        "voltage_settling_time",
        "excitation",
        "error",
    ])?;
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for r in rows {
        match &r.metrics {
            Some(m) => w.write_record([
                r.label.clone(),
                m.final_param_error_rel.to_string(),
                m.final_voltage_error.to_string(),
                opt(m.param_convergence_time),
                opt(m.voltage_settling_time),
                format!("{:?}", m.excitation).to_uppercase(),
                String::new(),
            ])?,
            None => w.write_record([
                r.label.clone(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                r.error.clone().unwrap_or_default(),
            ])?,
        }
    }
    w.flush()?;
    Ok(())
}
