use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sidapbc"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn count_pdes() {
    for (s, expect) in [("0", "0"), ("1", "1"), ("3", "10"), ("4", "20")] {
        let out = run(&["count-pdes", s]);
        assert!(out.status.success());
        assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), expect);
    }
}

#[test]
fn shipped_configs_verify() {
    for name in ["cart_pendulum.json", "ball_beam.json"] {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&["verify", "--config", config(name).to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
        let r = report(dir.path());
        assert_eq!(r["passed"], true);
        assert_eq!(r["seed"], 1);
        assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
        assert_eq!(r["tolerances"]["matching"], 1e-8);
        let matching = r["checks"].as_array().unwrap().iter().find(|c| c["name"] == "matching_residual").unwrap();
        assert!(matching["max_residual"].as_f64().unwrap() <= 1e-8);
    }
}

#[test]
fn perturbed_lambda_fails_and_names_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"system": "cart_pendulum", "perturb": {"lambda_scale": 1.01}}"#);
    let out = run(&["verify", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("FAIL matching_residual")), "{stdout}");
    assert_eq!(report(dir.path())["passed"], false);
}

#[test]
fn schema_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for body in [
        r#"{"system": "cart_pendulum", "samples": 0}"#,
        r#"{"system": "cart_pendulum", "params": {"bogus": 1.0}}"#,
        r#"{"system": "ball_beam", "params": {"eps": -1.0}}"#,
        r#"{"system": "custom"}"#,
        r#"{"system": "cart_pendulum", "surprise": true}"#,
        "not json",
    ] {
        let cfg = write_config(dir.path(), body);
        let out = run(&["verify", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{body}");
        assert!(!out.stderr.is_empty());
    }
    let out = run(&["verify", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic_and_converges() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = run(&["simulate", "--config", config("ball_beam.json").to_str().unwrap(), "--seed", "9", "--out", d.path().to_str().unwrap()]);
        assert!(out.status.success());
    }
    for f in ["trajectory.csv", "report.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(a.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,q_1,q_2,p_1,p_2,H_d,Hd_dot,u_1,residual_norm");
    let r = report(a.path());
    assert_eq!(r["converged"], true);
    assert_eq!(r["seed"], 9);
    assert_eq!(r["monotonicity_violations"], 0);
}

#[test]
fn cart_pendulum_simulation_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--config", config("cart_pendulum.json").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let r = report(dir.path());
    assert_eq!(r["converged"], true);
    assert_eq!(r["monotonicity_violations"], 0);
}

#[test]
fn zero_control_does_not_converge_and_keeps_energy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"system": "cart_pendulum", "control": "zero",
            "initial_state": {"q": [0.0, 3.0], "p": [0.0, 0.0]},
            "integrator": {"method": "rk4", "dt": 0.001, "t_end": 5.0, "record_stride": 100}}"#,
    );
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path());
    assert_eq!(r["converged"], false);
    assert!(r["plant_energy_drift"].as_f64().unwrap() < 1e-8);
}
