//! Exit codes and error reporting of the command line tool.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embedspread")).args(args).current_dir(dir).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn all_config_problems_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.json"),
        r#"{"train": {"epochs": 0, "learning_rate": -1},
            "network": {"arch": "mlp", "hidden": [4], "drop_prob": 2},
            "data": {"kind": "idx", "images": "imgs.idx", "labels": "lbls.idx"}}"#,
    )
    .unwrap();
    let o = run(dir.path(), &["train", "--config", "bad.json", "--out", "run"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for needle in ["imgs.idx", "lbls.idx", "drop_prob", "epochs", "learning_rate"] {
        assert!(err.contains(needle), "missing '{needle}' in:\n{err}");
    }
    assert!(!dir.path().join("run").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["simulate", "nonsense"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_bundle_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["features", "--bundle", "absent.json", "--synthetic", "id", "--out", "f.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("absent.json"));
}

#[test]
fn gradcheck_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gradcheck", "--out", "gc"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("gc/gradcheck.json")).unwrap()).unwrap();
    assert_eq!(report.as_array().unwrap().len(), 5);
    assert!(dir.path().join("gc/gradcheck.manifest.json").is_file());
}

#[test]
fn impossible_tolerance_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["gradcheck", "--tolerance", "1e-300"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_rejects_mismatched_columns() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.csv"), "label,max_softmax,mutual_info,pred_entropy\n0,0.9,0.1,0.2\n").unwrap();
    fs::write(dir.path().join("b.csv"), "label,max_softmax,mutual_info,pred_entropy,spread_1\n1,0.5,0.3,0.6,0.4\n")
        .unwrap();
    let o = run(dir.path(), &["eval", "--id", "a.csv", "--ood-train", "b.csv", "--out", "ev"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("do not match"), "{}", stderr(&o));
}

#[test]
fn simulation_writes_report_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["simulate", "correlations", "--iterations", "50", "--seed", "2", "--out", "sims"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sims/correlations.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["iterations"], 50);
    assert_eq!(report["config"]["seed"], 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sims/correlations.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"]["simulation"], 2);
}
