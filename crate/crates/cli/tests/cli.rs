use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn divlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_divlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const BINARY_MAPS: &str = r#"{"domain": ["a", "b"], "functions": ["f00", "f01", "f10", "f11"],
    "table": [[0, 0], [0, 1], [1, 0], [1, 1]]}"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn missing_input_names_the_path() {
    let out = divlab(&["eluder", "/no/such/class.json", "--eps", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/no/such/class.json"));
}

#[test]
fn malformed_input_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.json", "{\"weights\": [1.0]");
    let out = divlab(&["diversity", &p]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bad.json"));
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "cfg.json", r#"{"stepz": 10}"#);
    let out = divlab(&["--config", &p, "exp", "custom"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("stepz"));
}

#[test]
fn usage_errors_exit_64_and_help_exits_0() {
    assert_eq!(divlab(&["eluder", "x.json", "--eps", "0.5", "--bogus"]).status.code(), Some(64));
    assert_eq!(divlab(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(divlab(&["--help"]).status.code(), Some(0));
    assert_eq!(divlab(&["--version"]).status.code(), Some(0));
}

#[test]
fn node_budget_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "class.json", BINARY_MAPS);
    let out = divlab(&["eluder", &p, "--eps", "0.5", "--node-cap", "1"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn infeasible_hardness_exits_2() {
    let out = divlab(&["hardness", "relu", "--d", "1", "--eps", "0.5", "--sources", "e1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!stderr(&out).is_empty());
}

#[test]
fn eluder_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "class.json", BINARY_MAPS);
    let v = json(&divlab(&["eluder", &p, "--eps", "0.5", "--adversarial", "f00"]));
    assert_eq!(v["certificate"]["dim"], 2);
    assert_eq!(v["certificate"]["witness_labels"], serde_json::json!(["a", "b"]));
    assert_eq!(v["certificate"]["variant"], "longest");
    assert!(v["adversarial"]["target_excess"].as_f64().unwrap() >= 0.0625);

    let v = json(&divlab(&["eluder", &p, "--eps", "0.5", "--dual"]));
    assert_eq!(v["certificate"]["dim"], 1);
    assert!(v.get("adversarial").is_none());
}

#[test]
fn hardness_reports() {
    let v = json(&divlab(&["hardness", "relu", "--d", "3", "--eps", "0.5", "--sources", "e1"]));
    assert_eq!(v["source_excess"], 0.0);
    assert_eq!(v["target_excess"], 0.01171875);
    assert_eq!(v["ratio"], "inf");
    assert_eq!(v["separation"], 0.0078125);

    let v = json(&divlab(&["hardness", "packing", "--d", "2", "--eps", "0.5"]));
    assert_eq!(v["vectors"].as_array().unwrap().len(), 4);
}

#[test]
fn complexity_report() {
    let v = json(&divlab(&["complexity", "rademacher", "--points", "1,0", "--draws", "200"]));
    // One point on the unit ball: |ε| = 1 on every draw.
    assert!((v["mean"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["sup_method"], "closed_form");
}

#[test]
fn diversity_report() {
    let dir = tempfile::tempdir().unwrap();
    // Two points, one true representation and one that merges them.
    let p = write(
        dir.path(),
        "inst.json",
        r#"{"weights": [0.5, 0.5], "features": [[0], [1]],
            "representations": [[0, 1], [0, 0]],
            "source_functions": [[[0], [1]], [[1], [0]]],
            "target_functions": [[[0], [1]], [[1], [1]]],
            "sources": [0], "target": 0, "true_rep": 0}"#,
    );
    let v = json(&divlab(&["diversity", &p]));
    assert_eq!(v["source_excess"], serde_json::json!([0.0, 0.5]));
    assert_eq!(v["target_excess"], serde_json::json!([0.0, 0.5]));
    assert!(v["negative_transfer_witness"].is_null());
}

#[test]
fn experiment_csv_goes_to_the_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("custom.csv");
    let o = divlab(&[
        "exp",
        "custom",
        "--runs",
        "2",
        "--steps",
        "50",
        "--n-eval",
        "200",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "experiment,param,value,run,seed,mse,baseline,std,n_runs,failed_runs,terminal_activation"
    );
    // Two cells, each with two run rows and one aggregate.
    assert_eq!(lines.count(), 6);
}
