use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn yonder(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_yonder"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn simulate(dir: &Path, n: &str, seed: &str, flagged: &str) -> std::path::PathBuf {
    let csv = dir.join(format!("sim-{n}-{seed}.csv"));
    let out = yonder(&["simulate", "--n", n, "--seed", seed, "--flagged", flagged, "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    csv
}

fn footer_total(report: &str) -> usize {
    let line = report.lines().find(|l| l.starts_with("Future You n=")).expect("count footer");
    line.split(", ")
        .map(|part| part.rsplit('=').next().unwrap().parse::<usize>().unwrap())
        .sum()
}

#[test]
fn simulate_then_report_without_the_ui() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "400", "1", "56");
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 401);

    let table = dir.path().join("table.txt");
    let out = yonder(&["report", "--input", csv.to_str().unwrap(), "--out", table.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(&table).unwrap();
    let mut lines = report.lines();
    assert!(lines.next().unwrap().starts_with("Measure"));
    assert!(lines.next().unwrap().chars().all(|c| c == '-'));
    let rows: Vec<&str> = report.lines().filter(|l| l.starts_with('Δ')).collect();
    assert_eq!(rows.len(), 15);
    assert!(rows[0].starts_with("Δ Positive Emotion"));
    assert!(rows[14].starts_with("Δ Insight"));
    assert_eq!(footer_total(&report), 344);
    assert!(report.contains("**** p<0.0001"));
}

#[test]
fn runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = fs::read(simulate(dir.path(), "60", "9", "6")).unwrap();
    let other = tempfile::tempdir().unwrap();
    let b = fs::read(simulate(other.path(), "60", "9", "6")).unwrap();
    assert_eq!(a, b);
    let c = fs::read(simulate(dir.path(), "60", "10", "6")).unwrap();
    assert_ne!(a, c);
}

#[test]
fn report_formats() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate(dir.path(), "80", "2", "8");
    let input = csv.to_str().unwrap();

    let tsv = yonder(&["report", "--input", input, "--format", "tsv"]);
    assert!(tsv.status.success());
    let tsv = String::from_utf8(tsv.stdout).unwrap();
    assert_eq!(tsv.lines().count(), 16);
    assert!(tsv.lines().all(|l| l.split('\t').count() == 10));

    let json = yonder(&["report", "--input", input, "--format", "json", "--normality", "per-group", "--median-levene"]);
    assert!(json.status.success());
    let json = String::from_utf8(json.stdout).unwrap();
    assert!(json.trim_start().starts_with('{'));
    assert!(json.contains("\"n_per_condition\""));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let missing = yonder(&["report", "--input", dir.path().join("nope.csv").to_str().unwrap()]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.csv"));

    let tiny = simulate(dir.path(), "6", "1", "0");
    let out = yonder(&["report", "--input", tiny.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 3"));

    let out = yonder(&["simulate", "--n", "3", "--flagged", "5"]);
    assert!(!out.status.success());

    let out = yonder(&["report"]);
    assert!(!out.status.success());
}
