use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rfim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn make_model(dir: &Path, spec: &str, beta: &str, field: &str) -> String {
    let path = dir.join("model.json");
    let p = path.to_str().unwrap();
    let out = rfim(&["model", "make", "--spec", spec, "--beta", beta, "--field", field, "--seed", "1", "--out", p]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    p.to_string()
}

#[test]
fn graph_gen_formats() {
    let out = rfim(&["graph", "gen", "--spec", r#"{"kind":"cycle","n":4}"#]);
    assert!(out.status.success());
    let v = json_of(&out);
    assert_eq!(v["n"], 4);
    assert_eq!(v["edges"].as_array().unwrap().len(), 4);
    let out = rfim(&["graph", "gen", "--spec", r#"{"kind":"path","n":3}"#, "--format", "edges"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("3 2"));
}

#[test]
fn oracle_gap_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let m = make_model(dir.path(), r#"{"kind":"path","n":3}"#, "0.4", r#"{"kind":"uniform_symmetric","m":1}"#);
    let v = json_of(&rfim(&["oracle", "gap", "--model", &m]));
    let gap = v["gap"].as_f64().unwrap();
    assert!((gap - v["gap_rayleigh"].as_f64().unwrap()).abs() < 1e-9);
    let bin = dir.path().join("t.bin");
    let v = json_of(&rfim(&["oracle", "table", "--model", &m, "--binary", bin.to_str().unwrap()]));
    let total: f64 = v["probs"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(std::fs::metadata(&bin).unwrap().len(), 8 * (1 + 3 + 8));
}

#[test]
fn exit_codes() {
    let out = rfim(&["certify", "norm", "--matrix", "[[1,0],[0,1]]"]);
    assert_eq!(out.status.code(), Some(0));
    let out = rfim(&["certify", "norm", "--matrix", "[[1,0,0],[0,1,0]]"]);
    assert_eq!(out.status.code(), Some(4));
    let out = rfim(&["oracle", "gap", "--model", "/nonexistent/model.json"]);
    assert_eq!(out.status.code(), Some(4));
    let out = rfim(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(4));

    let dir = tempfile::tempdir().unwrap();
    let m = make_model(dir.path(), r#"{"kind":"path","n":14}"#, "0.2", r#"{"kind":"two_point","a":1}"#);
    assert_eq!(rfim(&["oracle", "gap", "--model", &m]).status.code(), Some(3));

    // an absurd tolerance forces a validation failure
    let m = make_model(dir.path(), r#"{"kind":"path","n":3}"#, "0.3", r#"{"kind":"two_point","a":0.5}"#);
    let out = rfim(&[
        "sample", "incremental", "--model", &m, "--cstar", "0.1", "--validate", "--replicas", "200", "--eps", "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sample_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let m = make_model(dir.path(), r#"{"kind":"path","n":4}"#, "0.5", r#"{"kind":"two_point","a":1}"#);
    let out_dir = dir.path().join("run");
    let out = rfim(&[
        "sample", "incremental", "--model", &m, "--cstar", "2.0", "--seed", "7", "--validate", "--replicas",
        "20000", "--out", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_of(&out);
    assert_eq!(v["report"]["total_updates"], 3 * 16);
    for f in ["manifest.json", "report.csv", "final_state.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn experiment_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"name": "demo", "seed": 11, "pipeline": [
            {"kind": "gap_certificate", "models": 2, "n": 6, "degree": 3, "beta": 0.5,
             "field": {"kind": "two_point", "a": 5.0}},
            {"kind": "wsm", "graph": {"kind": "path", "n": 5}, "beta": 0.5,
             "field": {"kind": "two_point", "a": 2.0}, "radii": [1, 2], "field_trials": 3}
        ]}"#,
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = rfim(&["experiment", "run", "--config", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 5);
    for n in names {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap());
    }

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 1, "pipeline": [{"kind": "gap_certificate", "models": "two"}]}"#).unwrap();
    let out = rfim(&["experiment", "run", "--config", bad.to_str().unwrap(), "--out", a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pipeline[0]"));
}

#[test]
fn certificates_and_percolation() {
    let v = json_of(&rfim(&["certify", "gap", "--n", "10", "--beta", "0.5", "--delta", "3", "--alpha-star", "0.8304"]));
    let log_gap = v["certificate"]["log_gap_lower"].as_f64().unwrap();
    assert!((log_gap + 10f64.ln() + 24.0 * 10f64.ln() / 0.8304).abs() < 1e-9);

    let v = json_of(&rfim(&[
        "certify", "mlsi", "--n", "8", "--beta", "0.5", "--delta", "3", "--m-bound", "1", "--p0", "0.05", "--k", "4",
    ]));
    assert!(v["rho_lower"].as_f64().unwrap() <= 1.0);

    let dir = tempfile::tempdir().unwrap();
    let m = make_model(dir.path(), r#"{"kind":"complete","n":3}"#, "0.3", r#"{"kind":"two_point","a":5}"#);
    let out = rfim(&["certify", "percolate", "--model", &m, "--k", "1", "--p0", "0.2", "--seed", "3", "--edge", "0,1"]);
    assert!(out.status.success());
    assert_eq!(json_of(&out)["disagreement"]["contained"], true);
}

#[test]
fn localization_and_sl_commands() {
    let dir = tempfile::tempdir().unwrap();
    let m = make_model(dir.path(), r#"{"kind":"path","n":3}"#, "0.5", r#"{"kind":"uniform_symmetric","m":1}"#);
    let v = json_of(&rfim(&["localize", "trace", "--model", &m, "--seed", "2", "--t", "1"]));
    assert_eq!(v["revealed"], v["satisfied"]);
    let v = json_of(&rfim(&["localize", "certificate", "--kind", "variance", "--c", "2", "--theta", "0.5"]));
    assert!((v["log_r"].as_f64().unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
    let v = json_of(&rfim(&["sl", "boost", "--model", &m, "--t", "0"]));
    assert!(v["y"].as_array().unwrap().iter().all(|y| y.as_f64() == Some(0.0)));
    let v = json_of(&rfim(&["sl", "plan", "--spec", r#"{"kind":"path","n":9}"#, "--points", "0,8"]));
    assert_eq!(v["ell"][1], 2);
    let v = json_of(&rfim(&[
        "sl", "wsm", "--spec", r#"{"kind":"path","n":5}"#, "--beta", "0", "--field", r#"{"kind":"two_point","a":1}"#,
        "--trials", "3",
    ]));
    assert!(v["radius_mean"].as_array().unwrap().iter().all(|d| d.as_f64() == Some(0.0)));
    let out = rfim(&["mix", "couple", "--model", &m, "--steps", "500", "--seed", "1"]);
    assert!(out.status.success());
    assert_eq!(json_of(&out)["order_violations"], 0);
}
