//! End-to-end checks of the command-line binary: artifact schemas,
//! determinism under fixed seeds, and structured error reporting.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cthmm"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn cthmm");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn write_model_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("model.json");
    std::fs::write(
        &path,
        r#"{"family": {"kind": "gaussian", "sigma": 1.0}}"#,
    )
    .unwrap();
    path
}

fn simulate(dir: &Path, seed: u64, subjects: usize) {
    run_ok(&[
        "simulate",
        "--preset",
        "ex5_3_gaussian",
        "--subjects",
        &subjects.to_string(),
        "--seed",
        &seed.to_string(),
        "--output",
        dir.to_str().unwrap(),
    ]);
}

#[test]
fn simulate_writes_schema_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    simulate(a.path(), 42, 12);
    simulate(b.path(), 42, 12);

    let data = read(&a.path().join("data.csv"));
    let header = data.lines().next().unwrap();
    assert_eq!(header, "subject_id,time,outcome");
    let ids: std::collections::BTreeSet<&str> = data
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(ids.len(), 12);
    for line in data.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 3, "row {line}");
        fields[1].parse::<f64>().unwrap();
        fields[2].parse::<f64>().unwrap();
    }

    assert_eq!(data, read(&b.path().join("data.csv")), "same seed, same data");

    let truth: serde_json::Value =
        serde_json::from_str(&read(&a.path().join("truth.json"))).unwrap();
    assert_eq!(truth["seed"], 42);
    assert_eq!(truth["cluster_of"].as_array().unwrap().len(), 12);
    assert_eq!(truth["paths"].as_array().unwrap().len(), 12);

    let c = tempfile::tempdir().unwrap();
    simulate(c.path(), 43, 12);
    assert_ne!(data, read(&c.path().join("data.csv")), "different seed, different data");
}

#[test]
fn fit_writes_trace_manifest_and_summaries() {
    let data_dir = tempfile::tempdir().unwrap();
    simulate(data_dir.path(), 7, 8);
    let fit_dir = tempfile::tempdir().unwrap();
    let model = write_model_config(fit_dir.path());
    let data_csv = data_dir.path().join("data.csv");
    let args = [
        "fit",
        "--data",
        data_csv.to_str().unwrap(),
        "--model-config",
        model.to_str().unwrap(),
        "--sampler",
        "rj",
        "--iterations",
        "60",
        "--burn-in",
        "20",
        "--thin",
        "2",
        "--seed",
        "5",
        "--output",
        fit_dir.path().to_str().unwrap(),
    ];
    run_ok(&args);

    // Trace: one JSON record per retained iteration, with model snapshots.
    let trace = read(&fit_dir.path().join("trace.jsonl"));
    let records: Vec<serde_json::Value> = trace
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 30);
    for r in &records {
        assert!(r["iteration"].is_u64());
        assert!(r["log_marginal"].is_number());
        let k = r["k"].as_u64().unwrap();
        let model = &r["model"];
        assert_eq!(model["pi"].as_array().unwrap().len(), k as usize);
        assert!(model["sigma"].is_number());
    }

    // Manifest captures the run configuration and a digest of the inputs.
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&fit_dir.path().join("manifest.json"))).unwrap();
    assert_eq!(manifest["sampler"], "rj");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["iterations"], 60);
    assert_eq!(manifest["subjects"], 8);
    assert_eq!(manifest["data_digest"].as_str().unwrap().len(), 64);

    // Posterior over K sums to one.
    let kpost = read(&fit_dir.path().join("k_posterior.csv"));
    let total: f64 = kpost
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9, "k posterior total {total}");

    let params = read(&fit_dir.path().join("params.csv"));
    assert!(params.lines().next().unwrap().contains("parameter"));
    assert!(params.lines().count() > 1);

    // Re-running with the same seed reproduces the trace byte for byte.
    let rerun = tempfile::tempdir().unwrap();
    let model2 = write_model_config(rerun.path());
    let mut args2: Vec<&str> = args.to_vec();
    args2[4] = model2.to_str().unwrap();
    args2[16] = rerun.path().to_str().unwrap();
    run_ok(&args2);
    assert_eq!(trace, read(&rerun.path().join("trace.jsonl")));

    // Summarize recomputes the tables from the trace alone.
    let sum_dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "summarize",
        "--trace",
        fit_dir.path().join("trace.jsonl").to_str().unwrap(),
        "--burn-in",
        "20",
        "--output",
        sum_dir.path().to_str().unwrap(),
    ]);
    assert_eq!(kpost, read(&sum_dir.path().join("k_posterior.csv")));
    let series = read(&sum_dir.path().join("trace_series.csv"));
    assert_eq!(series.lines().next().unwrap(), "iteration,dimension,log_marginal");
    // Retained iterations 22, 24, ..., 60 plus the header line.
    assert_eq!(series.lines().count(), 21);
}

#[test]
fn cluster_fit_writes_mixture_summaries() {
    let data_dir = tempfile::tempdir().unwrap();
    simulate(data_dir.path(), 11, 8);
    let fit_dir = tempfile::tempdir().unwrap();
    let model = write_model_config(fit_dir.path());
    run_ok(&[
        "cluster-fit",
        "--data",
        data_dir.path().join("data.csv").to_str().unwrap(),
        "--model-config",
        model.to_str().unwrap(),
        "--iterations",
        "40",
        "--burn-in",
        "10",
        "--seed",
        "3",
        "--output",
        fit_dir.path().to_str().unwrap(),
    ]);

    let trace = read(&fit_dir.path().join("trace.jsonl"));
    for line in trace.lines() {
        let r: serde_json::Value = serde_json::from_str(line).unwrap();
        let m = r["m"].as_u64().unwrap() as usize;
        assert_eq!(r["component_states"].as_array().unwrap().len(), m);
        assert_eq!(r["mixture"]["weights"].as_array().unwrap().len(), m);
    }

    for table in ["m_posterior.csv", "filled_clusters_posterior.csv"] {
        let text = read(&fit_dir.path().join(table));
        let total: f64 = text
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-9, "{table} total {total}");
    }
    let states = read(&fit_dir.path().join("conditional_states.csv"));
    assert_eq!(
        states.lines().next().unwrap(),
        "component,k,posterior_probability"
    );
    // Mean member counts are per component and account for every subject.
    let members = read(&fit_dir.path().join("memberships.csv"));
    assert_eq!(members.lines().next().unwrap(), "component,mean_member_count");
    let total: f64 = members
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 8.0).abs() < 1e-9, "member count total {total}");
}

fn expect_error(args: &[&str]) -> serde_json::Value {
    let out = bin().args(args).output().expect("spawn cthmm");
    assert!(!out.status.success(), "command {args:?} unexpectedly succeeded");
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().unwrap())
        .unwrap_or_else(|e| panic!("stderr not JSON ({e}): {stderr}"))
}

#[test]
fn errors_are_structured_json() {
    let dir = tempfile::tempdir().unwrap();
    let err = expect_error(&[
        "simulate",
        "--preset",
        "no_such_preset",
        "--seed",
        "1",
        "--output",
        dir.path().to_str().unwrap(),
    ]);
    assert!(err["error"].as_str().unwrap().contains("no_such_preset"));
    assert_eq!(err["kind"], "config");

    let data_dir = tempfile::tempdir().unwrap();
    simulate(data_dir.path(), 2, 4);
    let model = write_model_config(dir.path());
    let err = expect_error(&[
        "fit",
        "--data",
        data_dir.path().join("data.csv").to_str().unwrap(),
        "--model-config",
        model.to_str().unwrap(),
        "--iterations",
        "10",
        "--burn-in",
        "10",
        "--seed",
        "1",
        "--output",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(err["kind"], "config");

    // Missing required --seed is rejected by argument parsing.
    let out = bin()
        .args([
            "simulate",
            "--preset",
            "ex5_1",
            "--output",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
