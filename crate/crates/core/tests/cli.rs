use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use budget_er::cli::RunManifest;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_budget-er"))
        .args(args)
        .output()
        .expect("spawn budget-er")
}

fn ok(args: &[&str]) -> String {
    let out = bin(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn planted(dir: &Path, entities: usize) -> (PathBuf, PathBuf) {
    let e = entities.to_string();
    ok(&["gen-planted", "--entities", &e, "--seed", "3", "--out-dir", dir.to_str().unwrap()]);
    (dir.join("records.csv"), dir.join("truth.csv"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn run_writes_artifacts_within_budget() {
    let dir = tempfile::tempdir().unwrap();
    let (records, truth) = planted(dir.path(), 20);
    let out = dir.path().join("out");
    let summary = ok(&[
        "run", "--records", s(&records), "--truth", s(&truth), "--oracle", "true", "--budget", "1.0", "--seed", "7",
        "--out-dir", s(&out),
    ]);
    assert!(summary.starts_with("FP "), "{summary}");

    let run = read_json(&out.join("run.json"));
    let cost = run["report"]["cost"].as_f64().unwrap();
    assert!(cost <= 1.0);
    assert_eq!(run["manifest"]["config"]["budget"], 1.0);
    assert_eq!(run["manifest"], read_json(&out.join("manifest.json")));

    // report totals equal the transcript sums
    let transcript = std::fs::read_to_string(out.join("transcript.jsonl")).unwrap();
    let entries: Vec<serde_json::Value> = transcript.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.len() as u64, run["report"]["calls"].as_u64().unwrap());
    let tin: u64 = entries.iter().map(|e| e["tokens_in"].as_u64().unwrap()).sum();
    assert_eq!(tin, run["report"]["tokens_in"].as_u64().unwrap());
    let spent: f64 = entries.iter().map(|e| e["cost"].as_f64().unwrap()).sum();
    assert!((spent - cost).abs() < 1e-12);

    let iters = std::fs::read_to_string(out.join("iterations.csv")).unwrap();
    assert!(iters.starts_with("iteration,label_changes,oracle_calls,beta\n"));
    let last_beta: f64 = iters.lines().last().unwrap().rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(last_beta, cost);

    // the manifest replays to the same bytes
    let first = std::fs::read(out.join("run.json")).unwrap();
    let replay = dir.path().join("replay.json");
    let mut man: RunManifest = serde_json::from_value(run["manifest"].clone()).unwrap();
    man.out_dir = Some(out.clone());
    std::fs::write(&replay, serde_json::to_string(&man).unwrap()).unwrap();
    ok(&["run", "--config", s(&replay)]);
    assert_eq!(std::fs::read(out.join("run.json")).unwrap(), first);
}

#[test]
fn zero_budget_is_propagation_only() {
    let dir = tempfile::tempdir().unwrap();
    let (records, truth) = planted(dir.path(), 15);
    let out = dir.path().join("out");
    ok(&["run", "--records", s(&records), "--truth", s(&truth), "--budget", "0", "--theta", "0.1", "--out-dir", s(&out)]);
    assert!(std::fs::read_to_string(out.join("transcript.jsonl")).unwrap().is_empty());

    let dataset = budget_er::load_records(&records, budget_er::RecordFormat::Csv).unwrap();
    let cfg = budget_er::RunConfig {
        theta: 0.1,
        ..Default::default()
    };
    let lib = budget_er::run(&dataset, &cfg, None).unwrap();
    let run = read_json(&out.join("run.json"));
    let clusters: Vec<Vec<String>> = serde_json::from_value(run["clusters"].clone()).unwrap();
    assert_eq!(clusters, lib.cluster_ids(&dataset));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (records, truth) = planted(dir.path(), 10);
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(
        &cfg,
        format!(
            "records = {:?}\ntruth = {:?}\n[config]\nbudget = 0.5\ntheta = 0.7\n[config.graph]\nk = 4\n",
            s(&records),
            s(&truth)
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(&["run", "--config", s(&cfg), "--k", "6", "--out-dir", s(&out)]);
    let man = read_json(&out.join("manifest.json"));
    assert_eq!(man["config"]["graph"]["k"], 6);
    assert_eq!(man["config"]["theta"], 0.7);
    assert_eq!(man["config"]["budget"], 0.5);
    assert_eq!(man["config"]["m"], 5);
}

#[test]
fn sweep_rows_match_budgets() {
    let dir = tempfile::tempdir().unwrap();
    let (records, truth) = planted(dir.path(), 15);
    let out = dir.path().join("sweep");
    let csv = ok(&[
        "sweep", "--records", s(&records), "--truth", s(&truth), "--budgets", "0,0.001,0.01", "--out-dir", s(&out),
    ]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "budget,fp,nmi,cost");
    assert_eq!(lines.len(), 4);
    assert_eq!(std::fs::read_to_string(out.join("sweep.csv")).unwrap(), csv);
    let fp: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(fp.windows(2).all(|w| w[1] >= w[0]), "{fp:?}");

    let single = bin(&["sweep", "--records", s(&records), "--truth", s(&truth), "--budgets", "0.1"]);
    assert!(!single.status.success());
}

#[test]
fn knapsack_sim_reports_bound() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sim.csv");
    let text = ok(&["knapsack-sim", "--instances", "200", "--out", s(&csv)]);
    let max: f64 = text.split("max ratio ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!(max <= 4.912 * 1.05, "{text}");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 201);

    let again = ok(&["knapsack-sim", "--instances", "200"]);
    assert_eq!(again, text);

    let bad = bin(&["knapsack-sim", "--density-l", "20", "--density-u", "20"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("0 < L < U"));
}

#[test]
fn errors_exit_nonzero_with_diagnostic() {
    let missing = bin(&["run", "--records", "/nonexistent/records.csv"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("/nonexistent/records.csv"));

    let dir = tempfile::tempdir().unwrap();
    let (records, _) = planted(dir.path(), 5);
    // the simulated oracles need ground truth
    let no_truth = bin(&["run", "--records", s(&records), "--budget", "1"]);
    assert!(!no_truth.status.success());

    let bad_rate = bin(&["gen-planted", "--corruption", "1.0", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(!bad_rate.status.success());
}

#[test]
fn planted_files_have_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["gen-planted", "--entities", "60", "--sizes", "5", "--out-dir", s(dir.path())]);
    let records = std::fs::read_to_string(dir.path().join("records.csv")).unwrap();
    let truth = std::fs::read_to_string(dir.path().join("truth.csv")).unwrap();
    assert_eq!(records.lines().count(), 301);
    assert!(truth.starts_with("record_id,entity_id\n"));
    let entities: std::collections::BTreeSet<&str> =
        truth.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(entities.len(), 60);
}
