use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn msacm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msacm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) {
    fs::write(dir.join(name), serde_json::to_string_pretty(cfg).unwrap()).unwrap();
}

fn data_rows(path: &Path) -> usize {
    let text = fs::read_to_string(path).unwrap();
    // Provenance comment plus header.
    text.lines().filter(|l| !l.starts_with('#')).count() - 1
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
    }
}

fn small_config() -> Value {
    json!({
        "seed": 3,
        "optimizer": {"starts": 1, "max_evals": 800, "standard_errors": false},
        "data": {"input": "sim/series.csv"},
        "simulate": {"t": 400, "announcements": 24}
    })
}

/// Simulates and fits once into `run`.
fn fitted_run(dir: &Path) {
    write_config(dir, "cfg.json", &small_config());
    let out = msacm(dir, &["simulate", "--config", "cfg.json", "--out", "sim"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = msacm(dir, &["fit", "--config", "cfg.json", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_writes_requested_length() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "cfg.json", &json!({"simulate": {"t": 10, "announcements": 2}}));
    let out = msacm(tmp.path(), &["simulate", "--config", "cfg.json", "--out", "sim"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(data_rows(&tmp.path().join("sim/series.csv")), 10);
    let head = fs::read_to_string(tmp.path().join("sim/series.csv")).unwrap();
    assert!(head.starts_with("# config_hash="));
}

#[test]
fn same_seed_same_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    for dir in ["a", "b"] {
        let out = msacm(tmp.path(), &["simulate", "--seed", "11", "--out", dir]);
        assert!(out.status.success());
    }
    for f in ["series.csv", "states.csv", "calendar.csv"] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let out = msacm(tmp.path(), &["simulate", "--seed", "12", "--out", "c"]);
    assert!(out.status.success());
    assert_ne!(
        fs::read(tmp.path().join("a/series.csv")).unwrap(),
        fs::read(tmp.path().join("c/series.csv")).unwrap()
    );
}

#[test]
fn init_template_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = msacm(tmp.path(), &["fit", "--init", "--k", "3", "--starts", "4"]);
    assert!(out.status.success());
    let template: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(template["k"], 3);
    assert_eq!(template["optimizer"]["starts"], 4);
    let cfg = msacm::cli::RunConfig::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    cfg.validate().unwrap();
}

#[test]
fn unknown_config_key_is_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    write_config(tmp.path(), "cfg.json", &json!({"sead": 1}));
    let out = msacm(tmp.path(), &["simulate", "--config", "cfg.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_csv_is_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("bad.csv"),
        "date,rv,ret,x\n2020-01-02,12.0,0.1,0.0\n2020-01-03,abc,-0.2,0.1\n",
    )
    .unwrap();
    write_config(tmp.path(), "cfg.json", &json!({"data": {"input": "bad.csv"}}));
    let out = msacm(tmp.path(), &["fit", "--config", "cfg.json", "--out", "run"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn fits_nested_variant_without_proxy_requirement() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg["model"] = json!("amem");
    write_config(tmp.path(), "cfg.json", &cfg);
    assert!(msacm(tmp.path(), &["simulate", "--config", "cfg.json", "--out", "sim"]).status.success());
    let out = msacm(tmp.path(), &["fit", "--config", "cfg.json", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("run/fit.json")).unwrap()).unwrap();
    assert!(fit["provenance"]["config_hash"].is_string());
    assert!(fit["loglik"].as_f64().unwrap().is_finite());
    assert!(tmp.path().join("run/estimates.txt").exists());
}

#[test]
fn classify_diagnose_and_compare_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    fitted_run(root);

    // Calendar with no overlap leaves nothing to classify.
    copy_dir(&root.join("run"), &root.join("empty"));
    fs::write(root.join("old.csv"), "1990-01-02\n1990-01-03\n").unwrap();
    let mut cfg = small_config();
    cfg["data"]["calendar"] = json!("old.csv");
    write_config(root, "old.json", &cfg);
    let out = msacm(root, &["classify", "--config", "old.json", "--out", "empty"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    // Second run shares the fit but drops two announcements.
    copy_dir(&root.join("run"), &root.join("other"));
    let calendar: Vec<String> = fs::read_to_string(root.join("sim/calendar.csv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect();
    fs::write(root.join("fewer.csv"), calendar[2..].join("\n")).unwrap();
    let mut cfg = small_config();
    cfg["data"]["calendar"] = json!("fewer.csv");
    write_config(root, "fewer.json", &cfg);

    for (conf, dir) in [("cfg.json", "run"), ("fewer.json", "other")] {
        let out = msacm(root, &["classify", "--config", conf, "--out", dir]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let out = msacm(root, &["diagnose", "--config", conf, "--out", dir]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let diag: Value = serde_json::from_str(&fs::read_to_string(root.join("run/diagnostics.json")).unwrap()).unwrap();
    assert!(diag["provenance"]["seed"].is_u64());

    copy_dir(&root.join("run"), &root.join("twin"));
    let mut cmp = small_config();
    cmp["runs"] = json!(["run", "twin"]);
    write_config(root, "cmp.json", &cmp);
    let out = msacm(root, &["compare", "--config", "cmp.json", "--out", "cmp"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&fs::read_to_string(root.join("cmp/compare.json")).unwrap()).unwrap();
    let rows = report["ari"].as_array().unwrap();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r["ari"].as_f64() == Some(1.0)));

    cmp["runs"] = json!(["run", "other"]);
    write_config(root, "cmp.json", &cmp);
    let out = msacm(root, &["compare", "--config", "cmp.json", "--out", "cmp2"]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&calendar[0]), "{err}");

    // A held lock blocks a second writer.
    fs::write(root.join("run/.msacm.lock"), "").unwrap();
    let out = msacm(root, &["classify", "--config", "cfg.json", "--out", "run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
}
