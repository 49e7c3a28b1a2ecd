use kinswarm::SimConfig;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kinswarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinswarm")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, doc: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, doc.to_string()).unwrap();
    path
}

fn small_sim() -> Value {
    let mut sim = SimConfig::standard();
    sim.n = 16;
    sim.t_end = 0.05;
    sim.dt = 5e-3;
    serde_json::to_value(sim).unwrap()
}

fn run_dir(out: &Output) -> PathBuf {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

fn report(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap()
}

fn check(report: &Value, name: &str) -> Value {
    report["checks"].as_array().unwrap().iter().find(|c| c["name"] == name).cloned().unwrap_or(Value::Null)
}

#[test]
fn zero_horizon_writes_one_row_per_particle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &json!({ "experiment": "simulate", "sim": small_sim() }));
    let out = tmp.path().join("runs");
    let dir = run_dir(&kinswarm(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--sim.T=0",
        "--sim.N",
        "7",
    ]));
    let csv = std::fs::read_to_string(dir.join("snapshots.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,particle,x0,x1,v0,v1"));
    assert_eq!(lines.count(), 7);
    for name in ["config_echo.json", "report.json", "events.jsonl", "common_path.csv", "moments.json"] {
        assert!(dir.join(name).is_file(), "{name} missing");
    }
    assert!(!dir.join("points.csv").exists());
}

#[test]
fn artifacts_parse_and_seed_flag_is_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &json!({ "experiment": "simulate", "sim": small_sim() }));
    let out = tmp.path().join("runs");
    let dir = run_dir(&kinswarm(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "42"]));
    assert!(dir.file_name().unwrap().to_str().unwrap().ends_with("-s42"));
    let echo: Value = serde_json::from_slice(&std::fs::read(dir.join("config_echo.json")).unwrap()).unwrap();
    assert_eq!(echo["sim"]["noise"]["master_seed"], 42);
    let rep = report(&dir);
    assert_eq!(rep["experiment"], "simulate");
    assert_eq!(rep["master_seed"], 42);
    assert_eq!(check(&rep, "speed_defect")["pass"], true);
    for line in std::fs::read_to_string(dir.join("events.jsonl")).unwrap().lines() {
        let e: Value = serde_json::from_str(line).unwrap();
        assert_eq!(e["v_pre"].as_array().unwrap().len(), 2);
    }
    let path = std::fs::read_to_string(dir.join("common_path.csv")).unwrap();
    assert!(path.starts_with("t,w0,w1\n"));
    assert_eq!(path.lines().count(), 1 + 11);
}

#[test]
fn noiseless_oracle_matches_the_closed_form_billiard() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sim = small_sim();
    sim["N"] = json!(1);
    sim["T"] = json!(2.5);
    sim["dt"] = json!(0.01);
    sim["kernel"] = json!({ "kind": "zero" });
    sim["noise"]["sigma"] = json!(0.0);
    sim["noise"]["sigma_bar"] = json!(0.0);
    sim["init"]["spatial"] = json!({ "kind": "fixed_points", "points": [[0.0, 0.0]] });
    sim["init"]["velocity"] = json!({ "kind": "fixed", "vectors": [[1.0, 0.0]] });
    let cfg = write_config(tmp.path(), &json!({ "experiment": "oracle", "sim": sim }));
    let dir = run_dir(&kinswarm(&["--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]));
    let rep = report(&dir);
    let err = check(&rep, "max_position_error");
    assert!(err["value"].as_f64().unwrap() <= 1e-9);
    assert_eq!(err["pass"], true);
    assert_eq!(rep["results"]["billiard"]["events"], 1);
    assert_eq!(check(&rep, "hit_count_mismatches")["pass"], true);
}

#[test]
fn rerunning_the_echo_reproduces_the_report() {
    let tmp = tempfile::tempdir().unwrap();
    let doc = json!({
        "experiment": "couple",
        "sim": small_sim(),
        "N_list": [4, 8, 16],
        "coupling": { "record_every": 2 },
        "emit": ["csv"],
    });
    let cfg = write_config(tmp.path(), &doc);
    let out = tmp.path().to_str().unwrap();
    let first = run_dir(&kinswarm(&["--config", cfg.to_str().unwrap(), "--out", out]));
    let echo = first.join("config_echo.json");
    let second = run_dir(&kinswarm(&["--config", echo.to_str().unwrap(), "--out", out, "--threads", "1"]));
    assert_ne!(first, second);
    assert_eq!(std::fs::read(first.join("report.json")).unwrap(), std::fs::read(second.join("report.json")).unwrap());
    let points = std::fs::read_to_string(first.join("points.csv")).unwrap();
    assert!(points.starts_with("N,mean,se\n4,"));
    assert_eq!(points.lines().count(), 4);
    assert!(!first.join("events.jsonl").exists());
}

#[test]
fn invalid_input_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &json!({ "experiment": "simulate", "sim": small_sim() }));
    let out = tmp.path().to_str().unwrap();
    for extra in ["--sim.bogus=1", "--sim.dt=-1", "--experiment=teleport"] {
        let o = kinswarm(&["--config", cfg.to_str().unwrap(), "--out", out, extra]);
        assert_eq!(o.status.code(), Some(2), "{extra}");
        assert!(!o.stderr.is_empty());
    }
    let o = kinswarm(&["--config", tmp.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let mut sim = small_sim();
    sim["N"] = json!(1);
    sim["dt"] = json!(0.05);
    sim["kernel"] = json!({ "kind": "zero" });
    sim["noise"]["sigma"] = json!(0.0);
    sim["noise"]["sigma_bar"] = json!(0.0);
    sim["max_reflections_per_step"] = json!(2);
    sim["init"]["spatial"] = json!({ "kind": "fixed_points", "points": [[0.0, 0.0]] });
    sim["init"]["velocity"] = json!({ "kind": "fixed", "vectors": [[200.0, 0.0]] });
    let cfg = write_config(tmp.path(), &json!({ "experiment": "simulate", "sim": sim }));
    let o = kinswarm(&["--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("reflections"));
}
