//! End-to-end runs of the binary: subcommands, outputs and exit codes.

use std::path::PathBuf;
use std::process::{Command, Output};

fn dupam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dupam")).args(args).output().unwrap()
}

fn tmp(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("dupam-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn generate_then_solve_from_file() {
    let d = tmp("gen");
    let field = d.join("field.jsonl");
    let out = dupam(&["generate", "--window", "20", "--seed", "3", "--out", field.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&field).unwrap();
    assert_eq!(text.lines().count(), 1 + 41);
    let csv = d.join("state.csv");
    let out = dupam(&["solve", "--field", field.to_str().unwrap(), "--t-grid", "1,5", "--top", "3", "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = std::fs::read_to_string(&csv).unwrap();
    assert!(rows.starts_with("t,z,v,log_v,log_mass\n"));
    assert_eq!(rows.lines().count(), 1 + 2 * 3);
    std::fs::remove_dir_all(d).ok();
}

#[test]
fn solve_from_seed_matches_solve_from_dump() {
    let d = tmp("same");
    let field = d.join("f.jsonl");
    assert!(dupam(&["generate", "--window", "15", "--seed", "9", "--out", field.to_str().unwrap()]).status.success());
    let a = dupam(&["solve", "--window", "15", "--seed", "9", "--t-grid", "3"]);
    let b = dupam(&["solve", "--field", field.to_str().unwrap(), "--t-grid", "3"]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
    std::fs::remove_dir_all(d).ok();
}

#[test]
fn localise_emits_one_record_per_t() {
    let out = dupam(&["localise", "--t-grid", "1e3,1e4", "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let recs: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs.len(), 2);
    assert_eq!(recs[1]["t"], 1e4);
    assert!(recs[0]["sites"]["z1"]["xi"].as_f64().unwrap() >= 1.0);
}

#[test]
fn pathsum_lists_paths() {
    let out = dupam(&["pathsum", "--window", "2", "--seed", "1", "--t", "0.5", "--target", "1", "--max-len", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("steps,length,log_value"));
    // Paths 0 → 1 of length 1, 3, 5 inside [−2, 2].
    let n = lines.count();
    assert!(n > 3, "{n} paths");
}

#[test]
fn experiment_writes_its_record() {
    let d = tmp("exp");
    let out = dupam(&[
        "experiment", "localisation", "--t-grid", "1e3,2e3,4e3", "--replicates", "30", "--seed", "1",
        "--emit-plotdata", "--log-level", "quiet", "--out", d.to_str().unwrap(),
    ]);
    let code = out.status.code().unwrap();
    assert!(code == 0 || code == 1, "exit {code}: {}", String::from_utf8_lossy(&out.stderr));
    for f in ["replicates.jsonl", "summary.csv", "verdicts.json", "effective_config.toml", "run.json", "version.txt", "plot_two_site_mass.csv"] {
        assert!(d.join(f).exists(), "missing {f}");
    }
    let jsonl = std::fs::read_to_string(d.join("replicates.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 30);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("verdicts.json")).unwrap()).unwrap();
    let verdict = v["localisation"]["verdict"].as_str().unwrap();
    assert_eq!(verdict == "PASS", code == 0);
    // The recorded config reproduces the run.
    let cfg = d.join("effective_config.toml");
    let d2 = tmp("exp2");
    let out2 = dupam(&["--config", cfg.to_str().unwrap(), "experiment", "localisation", "--log-level", "quiet", "--out", d2.to_str().unwrap()]);
    assert_eq!(out2.status.code(), Some(code));
    assert_eq!(std::fs::read(d.join("replicates.jsonl")).unwrap(), std::fs::read(d2.join("replicates.jsonl")).unwrap());
    std::fs::remove_dir_all(d).ok();
    std::fs::remove_dir_all(d2).ok();
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(dupam(&["experiment", "phase", "--regime", "critical"]).status.code(), Some(2));
    assert_eq!(dupam(&["experiment", "critical", "--regime", "subcritical"]).status.code(), Some(2));
    assert_eq!(dupam(&["localise", "--regime", "nonsense"]).status.code(), Some(2));
    assert_eq!(dupam(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(dupam(&["generate"]).status.code(), Some(2));
    assert_eq!(dupam(&["experiment", "localisation", "--replicates", "5", "--t-grid", "1e3,2e3,4e3"]).status.code(), Some(2));
    assert_eq!(dupam(&["experiment", "localisation", "--t-grid", "1e4,1e3,1e5"]).status.code(), Some(2));
}

#[test]
fn missing_field_file_is_a_runtime_error() {
    let out = dupam(&["solve", "--field", "/nonexistent/field.jsonl", "--t-grid", "1"]);
    assert_eq!(out.status.code(), Some(3));
}
