use std::path::Path;
use std::process::{Command, Output};

use lowspace::hamiltonian::{build_model, ModelParams};
use serde_json::Value;

fn lowspace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lowspace")).args(args).env("LOWSPACE_THREADS", "1").output().expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_a_versioned_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = lowspace(&["solve", "--model", "pinned", "--n", "8", "--seed", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = read_json(&out);
    assert_eq!(doc["schema"], 1);
    assert_eq!(doc["command"], "solve");
    assert_eq!(doc["status"], "ok");
    assert_eq!(doc["seed"], 4);
    assert_eq!(doc["model"]["n"], 8);
    assert!(doc["final_overlap"].as_f64().unwrap() > 1.0 - 1e-3);
    assert!(doc["energies"][0].as_f64().unwrap().abs() < 1e-8);
    assert!(doc["report"]["levels"].as_array().unwrap().len() >= 3);
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
}

#[test]
fn solve_prints_to_stdout_without_out() {
    let o = lowspace(&["solve", "--model", "pinned", "--n", "4"]);
    assert_eq!(o.status.code(), Some(0));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["status"], "ok");
}

#[test]
fn repeated_solves_agree_apart_from_timings() {
    let run = || {
        let o = lowspace(&["solve", "--model", "tfi", "--n", "6", "--case", "dg", "--r", "1", "--gamma", "0.5", "--delta", "0.01", "--seed", "9"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let mut doc: Value = serde_json::from_slice(&o.stdout).unwrap();
        doc["report"]["timings"] = Value::Null;
        doc
    };
    assert_eq!(run(), run());
}

#[test]
fn bad_configuration_exits_with_one() {
    assert_eq!(lowspace(&["solve", "--model", "pinned", "--n", "8", "--delta", "2"]).status.code(), Some(1));
    assert_eq!(lowspace(&["solve", "--model", "unknown", "--n", "8"]).status.code(), Some(1));
    assert_eq!(lowspace(&["solve", "--model", "pinned"]).status.code(), Some(1));
    assert_eq!(lowspace(&["solve", "--model", "pinned", "--n", "8", "--eta", "1"]).status.code(), Some(1));
    assert_eq!(lowspace(&["solve", "--bogus-flag"]).status.code(), Some(1));
    assert_eq!(lowspace(&["verify", "--suite", "unknown"]).status.code(), Some(1));
}

#[test]
fn help_exits_cleanly() {
    let o = lowspace(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("solve"));
}

#[test]
fn resource_limit_exits_with_two_and_keeps_a_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("partial.json");
    let o = lowspace(&["solve", "--model", "pinned", "--n", "8", "--entry-budget", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let doc = read_json(&out);
    assert_eq!(doc["status"], "error");
    assert!(doc["error"].as_str().unwrap().contains("budget"));
    assert!(doc["report"]["params"].is_object());
}

#[test]
fn custom_model_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let terms = dir.path().join("terms.json");
    let h = build_model("pinned", 6, &ModelParams::new()).unwrap().with_gap_hint(1.0).with_degeneracy_hint(1);
    std::fs::write(&terms, h.to_json()).unwrap();
    let o = lowspace(&["solve", "--model", "custom", "--terms", terms.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(doc["final_overlap"].as_f64().unwrap() > 1.0 - 1e-3);

    let o = lowspace(&["solve", "--model", "custom", "--terms", terms.to_str().unwrap(), "--n", "7"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn non_hermitian_custom_term_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let terms = dir.path().join("bad.json");
    let mut m = vec![[0.0, 0.0]; 16];
    m[1] = [1.0, 0.0];
    let doc = serde_json::json!({ "n": 2, "d": 2, "terms": [m] });
    std::fs::write(&terms, doc.to_string()).unwrap();
    let o = lowspace(&["solve", "--model", "custom", "--terms", terms.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Hermitian"));
}

#[test]
fn verify_reports_named_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("verify.json");
    let o = lowspace(&["verify", "--suite", "dl", "--n", "6", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let doc = read_json(&out);
    assert_eq!(doc["command"], "verify");
    assert_eq!(doc["failed"], 0);
    let checks = doc["result"]["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 6);
    for c in checks {
        assert!(c["passed"].as_bool().unwrap());
        assert!(c["measured"].as_f64().unwrap() <= c["bound"].as_f64().unwrap());
        assert!(!c["name"].as_str().unwrap().is_empty());
    }
}

#[test]
fn bench_writes_csv_with_a_growth_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let o = lowspace(&["bench", "--model", "pinned", "--ns", "4,8", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut reader = csv::Reader::from_path(&out).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), ["n", "phase", "seconds", "peak_bond"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert!(rows.iter().any(|r| &r[0] == "4" && &r[1] == "total"));
    assert!(rows.iter().any(|r| &r[0] == "8" && &r[1] == "total"));
    assert!(rows.iter().any(|r| &r[1] == "growth_rate"));
}
