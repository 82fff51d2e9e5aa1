use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const STAR: &str = r#"{
  "version": 1,
  "nodes": [{"id": 0, "r": 1.0, "x0": 0.0}, {"id": 1, "r": 1.00001, "x0": 0.01}],
  "edges": [{"from": 1, "to": 0}],
  "weights": {"mode": "paper-eq15", "c": 0.7},
  "params": {"kappa1": 1.1, "kappa2": 1.0, "p": 0.99, "tau": 1.0},
  "run": {"steps": 300, "seed": 1}
}"#;

const LOOP: &str = r#"{
  "version": 1,
  "nodes": [
    {"id": 0, "r": 1.0, "x0": 0.0},
    {"id": 1, "r": 1.00001, "x0": 0.01},
    {"id": 2, "r": 0.99998, "x0": -0.05}
  ],
  "edges": [{"from": 1, "to": 0}, {"from": 1, "to": 2}, {"from": 2, "to": 0}, {"from": 2, "to": 1}],
  "weights": {"mode": "paper-eq15", "c": 0.7},
  "params": {"kappa1": 1.1, "kappa2": 1.0, "p": 0.99, "tau": 1.0},
  "run": {"steps": 600, "seed": 1}
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_skewless"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn analyze(text: &str) -> (Output, Value) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", text);
    let out = bin().arg("analyze").arg(&cfg).output().unwrap();
    let report = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (out, report)
}

#[test]
fn analyze_star_is_stable() {
    let (out, rep) = analyze(STAR);
    assert_eq!(out.status.code(), Some(0));
    let bound = rep["stability"]["tau_bound"].as_f64().unwrap();
    assert!((bound - 1.2717).abs() / 1.2717 < 1e-3);
    assert_eq!(rep["stability"]["verdict"], "Stable");
    assert!(rep["stability"]["xi"].is_array());
    assert!(rep["predicted"]["r_star"].is_f64());
}

#[test]
fn analyze_loop_is_unstable() {
    let (out, rep) = analyze(LOOP);
    assert_eq!(out.status.code(), Some(2));
    let bound = rep["stability"]["tau_bound"].as_f64().unwrap();
    assert!((bound - 0.8478).abs() / 0.8478 < 1e-3);
}

#[test]
fn analyze_rejects_large_averaging_gain() {
    let (out, rep) = analyze(&STAR.replace("\"p\": 0.99", "\"p\": 2.5"));
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(rep["stability"]["cond_i"], false);
}

#[test]
fn analyze_directed_cycle_is_not_covered() {
    let cycle = r#"{
      "version": 1,
      "nodes": [{"id": 0, "r": 1.0, "x0": 0.0}, {"id": 1, "r": 1.0, "x0": 0.0}, {"id": 2, "r": 1.0, "x0": 0.0}],
      "edges": [{"from": 0, "to": 1, "alpha": 0.3}, {"from": 1, "to": 2, "alpha": 0.3}, {"from": 2, "to": 0, "alpha": 0.3}],
      "weights": {"mode": "explicit"},
      "params": {"kappa1": 1.1, "kappa2": 1.0, "p": 0.99, "tau": 0.5},
      "run": {"steps": 10, "seed": 1}
    }"#;
    let (out, rep) = analyze(cycle);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(rep["stability"]["verdict"], "NotCovered");
}

#[test]
fn invalid_config_exits_one_with_location() {
    let (out, _) = analyze(&STAR.replace("\"seed\": 1", "\"seed\": \"one\""));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 7"), "{err}");
}

#[test]
fn simulate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", STAR);
    let out_dir = dir.path().join("out");
    let st = bin().arg("simulate").arg(&cfg).arg("-o").arg(&out_dir).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let csv = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert!(csv.starts_with("step,time_s,node,offset_to_leader_s,s,y\n"));
    assert_eq!(csv.lines().count(), 1 + 301 * 2);
    let rep: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["status"]["state"], "completed");
    assert_eq!(rep["metrics"]["converged"], true);
}

#[test]
fn simulate_divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", LOOP);
    let out_dir = dir.path().join("out");
    let st = bin().arg("simulate").arg(&cfg).arg("-o").arg(&out_dir).status().unwrap();
    assert_eq!(st.code(), Some(2));
    let rep: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(rep["status"]["state"], "diverged");
    assert!(out_dir.join("trace.csv").exists());
}

#[test]
fn canonical_echo_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", LOOP);
    let first = bin().arg("canonical").arg(&cfg).output().unwrap();
    assert!(first.status.success());
    let again = write(dir.path(), "again.json", std::str::from_utf8(&first.stdout).unwrap());
    let second = bin().arg("canonical").arg(&again).output().unwrap();
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn reproduce_naive_instability() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["reproduce", "naive-instability", "-o"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    let rep: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("naive-instability").join("report.json")).unwrap(),
    )
    .unwrap();
    assert!(rep["oscillation"]["growth_ratio"].as_f64().unwrap() >= 2.0);
}

#[test]
fn reproduced_config_simulates_identically() {
    let dir = tempfile::tempdir().unwrap();
    let st = bin().args(["reproduce", "exp1-loop-fixed", "--seed", "3", "-o"]).arg(dir.path()).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let preset_dir = dir.path().join("exp1-loop-fixed");
    let rerun = dir.path().join("rerun");
    let st = bin().arg("simulate").arg(preset_dir.join("config.json")).arg("-o").arg(&rerun).status().unwrap();
    assert_eq!(st.code(), Some(0));
    assert_eq!(fs::read(preset_dir.join("trace.csv")).unwrap(), fs::read(rerun.join("trace.csv")).unwrap());
}

#[test]
fn unknown_preset_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["reproduce", "exp9", "-o"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown preset"));
}

#[test]
fn profiles_lists_three() {
    let out = bin().arg("profiles").output().unwrap();
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 3);
}
