use pvdrem::drem::Excitation;
use pvdrem::harness::output::{write_run, FILES};
use pvdrem::harness::{run, sweep, ScenarioConfig};
use pvdrem::mpp::reference_mpp;
use pvdrem::plant::ControlLaw;

fn short(horizon: f64) -> ScenarioConfig {
    let mut c = ScenarioConfig::paper_sec8();
    c.sim.horizon = horizon;
    c
}

#[test]
fn runs_are_reproducible_to_the_byte() {
    let cfg = short(1.0);
    let (a, b) = (run(&cfg).unwrap(), run(&cfg).unwrap());
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    write_run(dirs[0].path(), &a).unwrap();
    write_run(dirs[1].path(), &b).unwrap();
    for f in FILES {
        let x = std::fs::read(dirs[0].path().join(f)).unwrap();
        let y = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f} empty");
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn logged_signals_are_finite() {
    let r = run(&short(3.0)).unwrap();
    let s = &r.series;
    assert!(!s.plant.is_empty() && !s.params.is_empty() && !s.observer.is_empty());
    for p in &s.plant {
        assert!([p.t, p.u, p.v, p.i, p.v_c, p.i_dot].iter().all(|x| x.is_finite()), "{p:?}");
    }
    for p in &s.params {
        assert!(p.a_hat.iter().chain(&p.a_true).all(|x| x.is_finite()));
        assert!(p.abs_error.is_finite() && p.rel_error.is_finite());
    }
    for e in &s.estimator {
        assert!(e.delta.is_finite() && e.theta_hat.iter().all(|x| x.is_finite()));
    }
    for o in &s.observer {
        assert!(o.v_hat.is_finite() && o.v_star_true.is_finite() && o.v_hat >= 0.0);
    }
}

#[test]
fn constant_input_is_reported_unexcited() {
    let mut cfg = short(6.0);
    cfg.control = ControlLaw::constant(cfg.control.bias);
    let r = run(&cfg).unwrap();
    assert_eq!(r.metrics.excitation, Excitation::Unexcited);
    // estimates stop moving once the transient has died out
    let est = &r.series.estimator;
    let late: Vec<_> = est.iter().filter(|e| e.t >= cfg.sim.horizon - 1.0).collect();
    let (first, last) = (late.first().unwrap(), late.last().unwrap());
    for k in 0..5 {
        let scale = first.theta_hat[k].abs().max(1e-12);
        assert!((last.theta_hat[k] - first.theta_hat[k]).abs() <= 1e-6 * scale, "coordinate {k}");
    }
}

#[test]
fn ramp_ground_truth_is_recomputed() {
    let mut cfg = ScenarioConfig::temperature_ramp();
    cfg.sim.horizon = 40.0;
    cfg.environment.ramp_start = 5.0;
    cfg.environment.ramp_duration = 30.0;
    let r = run(&cfg).unwrap();
    let obs = &r.series.observer;
    let lo = obs.iter().map(|o| o.v_star_true).fold(f64::INFINITY, f64::min);
    let hi = obs.iter().map(|o| o.v_star_true).fold(f64::NEG_INFINITY, f64::max);
    assert!(hi - lo > 1.0, "V* span {lo}..{hi}");
    for o in obs.iter().step_by(obs.len() / 7 + 1) {
        let truth = cfg.truth_at(o.t).unwrap();
        let v = reference_mpp(&truth).unwrap().v;
        assert!((v - o.v_star_true).abs() <= 1e-6 * v, "t = {}", o.t);
    }
}

#[test]
fn sweep_matches_isolated_runs() {
    let base = short(0.5);
    let configs = pvdrem::harness::sweep::vary(&base, "drem.gains", &["[1.0, 1.0, 1.0, 1.0, 1.0]", "[50.0, 50.0, 50.0, 50.0, 50.0]"]).unwrap();
    let mut broken = base.clone();
    broken.sim.dt = -1.0;
    let mut all = configs.clone();
    all.push(("broken".into(), broken));
    let rows = sweep(&all);
    assert_eq!(rows.len(), 3);
    for ((label, cfg), row) in configs.iter().zip(&rows) {
        assert_eq!(&row.label, label);
        let alone = run(cfg).unwrap().metrics;
        assert_eq!(row.metrics.as_ref().unwrap().to_json().unwrap(), alone.to_json().unwrap());
    }
    assert!(rows[2].metrics.is_none() && rows[2].error.is_some());
}
