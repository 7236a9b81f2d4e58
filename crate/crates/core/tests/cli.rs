use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn qwyc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qwyc")).args(args).output().unwrap()
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn worked_example_args<'a>(csv: &'a str, meta: &'a str) -> Vec<&'a str> {
    vec!["--input", csv, "--meta", meta]
}

#[test]
fn optimize_then_evaluate_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, meta) = (fixture("worked_example.csv"), fixture("worked_example.meta.json"));
    let (csv, meta) = (csv.to_str().unwrap(), meta.to_str().unwrap());
    let policy = dir.path().join("policy.json");
    let hist = dir.path().join("hist.csv");

    let mut args = vec!["optimize"];
    args.extend(worked_example_args(csv, meta));
    args.extend(["--out", policy.to_str().unwrap()]);
    let out = qwyc(&args);
    assert!(out.status.success());
    let report = json(&out.stdout);
    assert_eq!(report["mean_cost"], 1.75);
    assert_eq!(report["pct_diff"], 0.0);

    let saved = json(&std::fs::read(&policy).unwrap());
    assert_eq!(saved["type"], "qwyc");
    assert_eq!(saved["order"], serde_json::json!([2, 1, 0]));

    let mut args = vec!["evaluate", "--policy", policy.to_str().unwrap()];
    args.extend(worked_example_args(csv, meta));
    args.extend(["--histogram", hist.to_str().unwrap()]);
    let out = qwyc(&args);
    assert!(out.status.success());
    assert_eq!(json(&out.stdout)["stop_histogram"], serde_json::json!([4, 2, 2]));
    assert_eq!(std::fs::read_to_string(&hist).unwrap(), "models_evaluated,count\n1,4\n2,2\n3,2\n");
}

#[test]
fn accuracy_absent_without_labels() {
    let (csv, meta) = (fixture("worked_example.csv"), fixture("worked_example.meta.json"));
    let mut args = vec!["optimize"];
    args.extend(worked_example_args(csv.to_str().unwrap(), meta.to_str().unwrap()));
    let dir = tempfile::tempdir().unwrap();
    let policy = dir.path().join("p.json");
    args.extend(["--out", policy.to_str().unwrap()]);
    let report = json(&qwyc(&args).stdout);
    assert!(report.get("accuracy").is_none());
}

#[test]
fn fan_policy_defaults_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let policy = dir.path().join("fan.json");
    let csv = fixture("worked_example.csv");
    let out = qwyc(&[
        "optimize",
        "--input",
        csv.to_str().unwrap(),
        "--method",
        "fixed-order-fan",
        "--order",
        "training",
        "--out",
        policy.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let saved = json(&std::fs::read(&policy).unwrap());
    assert_eq!(saved["type"], "fan");
    assert_eq!(saved["lambda"], 0.01);
    assert_eq!(saved["stages"].as_array().unwrap().len(), 2);
}

#[test]
fn oracle_reports_both_minimizers() {
    let (csv, meta) = (fixture("worked_example.csv"), fixture("worked_example.meta.json"));
    let mut args = vec!["oracle"];
    args.extend(worked_example_args(csv.to_str().unwrap(), meta.to_str().unwrap()));
    let out = qwyc(&args);
    assert!(out.status.success());
    let report = json(&out.stdout);
    assert_eq!(report["best_cost"], 1.75);
    assert_eq!(report["search_space_size"], 6);
    assert_eq!(report["optimal_orders"], serde_json::json!([[2, 0, 1], [2, 1, 0]]));
}

#[test]
fn invalid_input_exits_with_two() {
    let csv = fixture("worked_example.csv");
    let csv = csv.to_str().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("p.json");
    let out_path = out_path.to_str().unwrap();

    let out = qwyc(&["optimize", "--input", csv, "--alpha", "1.5", "--out", out_path]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));

    let out = qwyc(&["optimize", "--input", csv, "--order", "random", "--out", out_path]);
    assert_eq!(out.status.code(), Some(2));

    let out = qwyc(&["oracle", "--input", csv, "--max-t", "2"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "id,s0\ne1,abc\n").unwrap();
    let out = qwyc(&["optimize", "--input", bad.to_str().unwrap(), "--out", out_path]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_file_exits_with_one() {
    let out = qwyc(&["evaluate", "--policy", "/nonexistent/policy.json", "--input", "/nonexistent/x.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("/nonexistent/policy.json"), "{stderr}");
}

#[test]
fn synth_train_score_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let ok = |args: &[&str]| {
        let out = qwyc(args);
        assert!(out.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&out.stderr));
        out
    };
    ok(&["synth", "--rows", "600", "--seed", "4", "--out", &p("data.csv")]);
    ok(&[
        "split",
        "--input",
        &p("data.csv"),
        "--seed",
        "1",
        "--train-out",
        &p("train.csv"),
        "--test-out",
        &p("test.csv"),
    ]);
    ok(&["train-gbt", "--input", &p("train.csv"), "--trees", "12", "--depth", "2", "--out", &p("model.json")]);
    ok(&["score", "--model", &p("model.json"), "--input", &p("train.csv"), "--out", &p("train_s.csv")]);
    ok(&["score", "--model", &p("model.json"), "--input", &p("test.csv"), "--out", &p("test_s.csv")]);
    let meta = p("train_s.meta.json");
    assert!(Path::new(&meta).exists());

    let out = ok(&["optimize", "--input", &p("train_s.csv"), "--meta", &meta, "--out", &p("policy.json")]);
    let report = json(&out.stdout);
    assert_eq!(report["pct_diff"], 0.0);
    assert!(report["accuracy"].is_number());
    assert!(report["mean_models"].as_f64().unwrap() <= 12.0);

    ok(&[
        "sweep",
        "--input",
        &p("train_s.csv"),
        "--meta",
        &meta,
        "--test",
        &p("test_s.csv"),
        "--test-meta",
        &p("test_s.meta.json"),
        "--knob",
        "alpha",
        "--values",
        "0.02,0",
        "--out",
        &p("sweep.csv"),
    ]);
    let sweep = std::fs::read_to_string(p("sweep.csv")).unwrap();
    let lines: Vec<&str> = sweep.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("knob,value,"));
    assert!(lines[1].starts_with("alpha,0.0,"));

    ok(&["time", "--model", &p("model.json"), "--input", &p("test.csv"), "--policy", &p("policy.json"), "--runs", "2"]);
}
