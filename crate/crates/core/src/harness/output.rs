//! Per-run output directory: CSV series plus `metrics.json`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::run::{ParamRecord, PlantRecord, RunReport, Series};
use crate::drem::write_estimator_csv;
use crate::error::Result;
use crate::mpp::write_observer_csv;
use crate::pv_model::IvPoint;
use crate::regressor::write_samples_csv;

pub const FILES: &[&str] = &[
    "plant.csv",
    "params.csv",
    "regressor.csv",
    "estimator.csv",
    "observer.csv",
    "metrics.json",
    "config.toml",
];

/// Writes `t, u, v, i, v_c, i_dot`.
pub fn write_plant_csv<W: Write>(out: W, rows: &[PlantRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "u", "v", "i", "v_c", "i_dot"])?;
    for r in rows {
        w.write_record([r.t, r.u, r.v, r.i, r.v_c, r.i_dot].map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `t, a_hat1..a_hat5, a1..a5, abs_error, rel_error`.
pub fn write_params_csv<W: Write>(out: W, rows: &[ParamRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=5).map(|k| format!("a_hat{k}")));
    header.extend((1..=5).map(|k| format!("a{k}")));
    header.extend(["abs_error".to_string(), "rel_error".to_string()]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.t.to_string()];
        rec.extend(r.a_hat.iter().chain(&r.a_true).map(|x| x.to_string()));
        rec.push(r.abs_error.to_string());
        rec.push(r.rel_error.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `v, i, p`.
pub fn write_iv_csv<W: Write>(out: W, points: &[IvPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["v", "i", "p"])?;
    for p in points {
        w.write_record([p.v, p.i, p.p].map(|x| x.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn open(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes the five CSV series into `dir` (also used for partial logs).
pub fn write_series(dir: &Path, s: &Series) -> Result<()> {
    fs::create_dir_all(dir)?;
    let open = |name: &str| open(dir, name);
    write_plant_csv(open("plant.csv")?, &s.plant)?;
    write_params_csv(open("params.csv")?, &s.params)?;
    write_samples_csv(open("regressor.csv")?, &s.regression)?;
    write_estimator_csv(open("estimator.csv")?, &s.estimator)?;
    write_observer_csv(open("observer.csv")?, &s.observer)
}

/// Writes all series, the metrics and the resolved configuration into `dir`.
pub fn write_run(dir: &Path, report: &RunReport) -> Result<()> {
    write_series(dir, &report.series)?;
    let mut m = open(dir, "metrics.json")?;
    serde_json::to_writer_pretty(&mut m, &report.metrics)?;
    writeln!(m)?;
    m.flush()?;
    fs::write(dir.join("config.toml"), report.config.to_toml()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run, ScenarioConfig};

    #[test]
    fn writes_every_file_with_headers_and_identical_bytes() {
        let mut cfg = ScenarioConfig::paper_sec8();
        cfg.sim.horizon = 0.6;
        let report = run(&cfg).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_run(d1.path(), &report).unwrap();
        write_run(d2.path(), &run(&cfg).unwrap()).unwrap();
        for f in FILES {
            let a = fs::read(d1.path().join(f)).unwrap();
            assert_eq!(a, fs::read(d2.path().join(f)).unwrap(), "{f}");
        }
        let plant = fs::read_to_string(d1.path().join("plant.csv")).unwrap();
        assert!(plant.starts_with("t,u,v,i,v_c,i_dot\n"));
        let obs = fs::read_to_string(d1.path().join("observer.csv")).unwrap();
        assert!(obs.starts_with("t,v_hat,v_star_true,h_v_hat\n"));
        let metrics: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d1.path().join("metrics.json")).unwrap()).unwrap();
        assert_eq!(metrics["name"], "paper-sec8");
    }
}
