use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pvdrem::harness::output::{write_iv_csv, write_run, write_series};
use pvdrem::harness::sweep::{vary, write_sweep_csv};
use pvdrem::harness::{run, sweep, ScenarioConfig, PRESETS};
use pvdrem::mpp::{brute_force_mpp, stationarity_root, MppParams, StationarityForm};
use pvdrem::pv_model::{iv_curve, open_circuit_voltage};

#[derive(Parser)]
#[command(name = "pvdrem", version, about = "Online PV curve identification and MPP voltage estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Scenario {
    /// TOML file; applied on top of the preset when both are given.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// Reserved; simulations are deterministic.
    #[arg(long)]
    seed: Option<u64>,
    /// Log every integration step.
    #[arg(long)]
    log_full: bool,
}

impl Scenario {
    fn load(&self) -> Result<ScenarioConfig> {
        let base = match &self.preset {
            Some(p) => Some(ScenarioConfig::preset(p)?),
            None if self.config.is_none() => Some(ScenarioConfig::paper_sec8()),
            None => None,
        };
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ScenarioConfig::from_toml(&text, base.as_ref())?
            }
            None => base.expect("preset or default"),
        };
        if self.log_full {
            cfg.sim.log_full = true;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its series and metrics.
    Run {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run variants of one scenario in parallel, varying one dotted key.
    Sweep {
        #[command(flatten)]
        scenario: Scenario,
        /// `key=v1,v2,...`, e.g. `observer.gamma_v=0.01,0.02,0.03`.
        #[arg(long)]
        vary: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Tabulate the IV and power curves of the scenario's initial parameters.
    IvCurve {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print the reference MPP of the scenario's initial parameters.
    MppOracle {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, default_value_t = 64)]
        grid: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { scenario, out } => {
            let cfg = scenario.load()?;
            let dir = out.join(&cfg.name);
            match run(&cfg) {
                Ok(report) => {
                    write_run(&dir, &report)?;
                    println!("{}", report.metrics.to_json()?);
                    println!("wrote {}", dir.display());
                }
                Err(failure) => {
                    if !failure.partial.plant.is_empty() {
                        write_series(&dir, &failure.partial)?;
                        eprintln!("partial logs in {}", dir.display());
                    }
                    bail!("{failure}");
                }
            }
        }
        Command::Sweep { scenario, vary: spec, out } => {
            let base = scenario.load()?;
            let (key, values) = spec.split_once('=').context("--vary expects key=v1,v2,...")?;
            let values = split_top_level(values);
            if values.is_empty() {
                bail!("--vary lists no values");
            }
            let rows = sweep(&vary(&base, key, &values)?);
            fs::create_dir_all(&out)?;
            let path = out.join(format!("{}-sweep.csv", base.name));
            write_sweep_csv(BufWriter::new(File::create(&path)?), &rows)?;
            write_sweep_csv(std::io::stdout().lock(), &rows)?;
            println!("wrote {}", path.display());
        }
        Command::IvCurve { scenario, points, out } => {
            let cfg = scenario.load()?;
            let a = cfg.truth_at(0.0)?;
            let voc = open_circuit_voltage(&a)?;
            let n = points.max(2);
            let grid: Vec<f64> = (0..n).map(|k| voc * k as f64 / (n - 1) as f64).collect();
            let curve = iv_curve(&a, &grid)?;
            fs::create_dir_all(&out)?;
            let path = out.join("iv_curve.csv");
            write_iv_csv(BufWriter::new(File::create(&path)?), &curve)?;
            println!("wrote {} ({} points up to V_oc = {voc:.3} V)", path.display(), curve.len());
        }
        Command::MppOracle { scenario, grid } => {
            let cfg = scenario.load()?;
            let a = cfg.truth_at(0.0)?;
            let voc = open_circuit_voltage(&a)?;
            let best = brute_force_mpp(&a, voc, grid)?;
            let p = MppParams::from_iv(&a);
            println!("a = {:?}", a.to_array());
            println!("open-circuit voltage  {voc:.6} V");
            println!("brute-force MPP       V = {:.6} V, I = {:.6} A, P = {:.3} W", best.v, best.i, best.p);
            for form in [StationarityForm::OnCurve, StationarityForm::ClosedForm] {
                match stationarity_root(&p, form, 1e-9, voc) {
                    Ok(v) => println!("H root ({form:?})  {v:.6} V"),
                    Err(e) => println!("H root ({form:?})  unavailable: {e}"),
                }
            }
        }
    }
    Ok(())
}

/// Splits on commas outside brackets, so array literals survive.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (k, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..k].trim());
                start = k + 1;
            }
            _ => {}
        }
    }
    out.push(s[start..].trim());
    out.retain(|v| !v.is_empty());
    out
}
