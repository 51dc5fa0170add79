use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nhj::formats::{load_field, save_field};
use serde_json::Value;
use tempfile::TempDir;

fn nhj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nhj"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config(dir: &Path, name: &str, json: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, json).unwrap();
    path
}

fn run(subcommand: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![subcommand, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    nhj(&args)
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn free_particle_solve_is_exact() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "free.json", r#"{"scenario": "free_particle", "params": {"n": 2}}"#);
    let out = dir.path().join("out");
    let o = run("solve", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(out.join("residual.json"));
    assert!(r["residual_max"].as_f64().unwrap() <= 1e-10);
    let csv = std::fs::read_to_string(out.join("field_t0.csv")).unwrap();
    assert!(csv.starts_with("x1,x2,S\n"));
    assert!(out.join("plot.py").exists());
}

#[test]
fn coarse_time_grid_is_a_numeric_error() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "free.json", r#"{"scenario": "free_particle", "params": {"n": 1}}"#);
    let o = run("solve", &cfg, &dir.path().join("out"), &["--steps", "2"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("StabilityViolation"));
}

#[test]
fn harmonic_convergence_order() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        dir.path(),
        "h.json",
        r#"{"scenario": "harmonic_1d", "params": {"a1": 0.1}, "grid": {"cells": [64], "time_steps": 256}}"#,
    );
    let out = dir.path().join("out");
    let o = run("convergence", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(out.join("convergence.json"));
    assert!(r["order_max"].as_f64().unwrap() >= 1.8, "{r}");
    assert_eq!(r["levels"].as_array().unwrap().len(), 2);
}

#[test]
fn rail_simulation_reports_weight_as_multiplier() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "rail.json", r#"{"scenario": "rail_gravity", "x0": [-0.5, 0.0]}"#);
    let out = dir.path().join("out");
    let o = run("simulate", &cfg, &out, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(out.join("comparison.json"));
    assert!(r["sup_norm_gap"].as_f64().unwrap() <= 1e-8);
    assert!(r["max_lambda_disagreement"].as_f64().unwrap() <= 1e-8);
    for name in ["trajectory_hj.csv", "trajectory_dalembert.csv"] {
        let mut reader = csv::Reader::from_path(out.join(name)).unwrap();
        let headers = reader.headers().unwrap().clone();
        let col = headers.iter().position(|h| h == "lambda1").unwrap();
        let mut rows = 0;
        for row in reader.records() {
            let lambda: f64 = row.unwrap()[col].parse().unwrap();
            assert!((lambda - 1.0).abs() <= 1e-8, "{name}: {lambda}");
            rows += 1;
        }
        assert_eq!(rows, 401);
    }
}

#[test]
fn start_outside_domain_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "rail.json", r#"{"scenario": "rail_gravity"}"#);
    let o = run("simulate", &cfg, &dir.path().join("out"), &["--x0", "5,0"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("OutOfDomain"));
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let bad = config(dir.path(), "bad.json", "{\"scenario\": \"rail_gravity\",\n");
    let o = run("solve", &bad, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("ParseError"));
    let unknown = config(dir.path(), "unknown.json", r#"{"scenario": "rail_gravity", "extra": 1}"#);
    let o = run("solve", &unknown, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("SchemaError"));
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&run("solve", &missing, &dir.path().join("out"), &[])), 2);
}

#[test]
fn inadmissible_launch_velocity() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "rail.json", r#"{"scenario": "rail_gravity"}"#);
    let o = run("simulate", &cfg, &dir.path().join("out"), &["--v0", "0,1"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn free_particle_audit_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "free.json", r#"{"scenario": "free_particle", "params": {"n": 1}}"#);
    let out = dir.path().join("out");
    let o = run("audit", &cfg, &out, &["--perturbations", "100", "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let r = json(out.join("audit.json"));
    assert_eq!(r["perturbation_actions"].as_array().unwrap().len(), 100);
    assert!(String::from_utf8_lossy(&o.stdout).contains("overall: PASS"));
}

#[test]
fn zero_amplitude_zero_slack_audit_passes() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "rail.json", r#"{"scenario": "rail_gravity", "x0": [-0.5, 0.0]}"#);
    let o = run(
        "audit",
        &cfg,
        &dir.path().join("out"),
        &["--amplitude", "0", "--slack", "0", "--perturbations", "10"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn corrupted_field_fails_the_audit() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        dir.path(),
        "h.json",
        r#"{"scenario": "harmonic_1d", "params": {"a1": 0.1}, "x0": [0.5]}"#,
    );
    let out = dir.path().join("out");
    let o = run("solve", &cfg, &out, &["--save-field"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let good = out.join("field.bin");
    let mut field = load_field(&good).unwrap();
    let last = field.spec().steps();
    field.slice_mut(last).iter_mut().for_each(|s| *s = 0.0);
    let bad = dir.path().join("bad.bin");
    save_field(&field, &bad).unwrap();

    let o = run("audit", &cfg, &dir.path().join("a"), &["--field", good.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let o = run("audit", &cfg, &dir.path().join("b"), &["--field", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stdout));
    let r = json(dir.path().join("b").join("audit.json"));
    assert_eq!(r["flags"]["minimality"], Value::Bool(true), "{r}");
    assert_eq!(r["flags"]["gamma_constancy"], Value::Bool(false), "{r}");
}

#[test]
fn field_from_another_grid_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "free.json", r#"{"scenario": "free_particle", "params": {"n": 1}}"#);
    let out = dir.path().join("out");
    assert_eq!(code(&run("solve", &cfg, &out, &["--save-field"])), 0);
    let field = out.join("field.bin");
    let o = run("audit", &cfg, &dir.path().join("a"), &["--field", field.to_str().unwrap(), "--grid", "16"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn runs_are_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        dir.path(),
        "rail.json",
        r#"{"scenario": "rail_gravity", "x0": [-0.5, 0.0], "audit": {"seed": 11, "perturbations": 20}}"#,
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(code(&run("audit", &cfg, out, &[])), 0);
        assert_eq!(code(&run("simulate", &cfg, out, &[])), 0);
        assert_eq!(code(&run("solve", &cfg, out, &[])), 0);
    }
    for name in [
        "audit.json",
        "comparison.json",
        "trajectory_hj.csv",
        "trajectory_dalembert.csv",
        "field_t0.csv",
        "residual.json",
    ] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn config_from_stdin() {
    use std::io::Write;
    use std::process::Stdio;
    let dir = TempDir::new().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_nhj"))
        .args(["solve", "--config", "-", "--out", dir.path().to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(br#"{"scenario": "free_particle", "params": {"n": 1}}"#)
        .unwrap();
    assert!(child.wait().unwrap().success());
    assert!(dir.path().join("residual.json").exists());
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        dir.path(),
        "knife.json",
        r#"{"scenario": "knife_edge", "grid": {"cells": [12, 12, 12], "time_steps": 40}, "x0": [0.1, 0.0, 1.0]}"#,
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&run("simulate", &cfg, &a, &["--threads", "1"])), 0);
    assert_eq!(code(&run("simulate", &cfg, &b, &["--threads", "3"])), 0);
    for name in ["comparison.json", "trajectory_hj.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}
