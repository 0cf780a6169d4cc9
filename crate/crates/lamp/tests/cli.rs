//! End-to-end tests of the `lamp` binary: exit codes, artefact layout,
//! and byte-level determinism of the written outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn lamp() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lamp"))
}

fn toy() -> &'static str {
    concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/toy_acm.json")
}

fn run(args: &[&str]) -> Output {
    lamp().args(args).output().expect("failed to spawn lamp")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("no exit code")
}

/// A small but non-degenerate training configuration for the toy data.
fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("train.cfg");
    fs::write(
        &p,
        "epochs = 5\ndim = 4\nlayers = 1\ngcn_layers = 1\npatience = 5\nt_pos = 1\n",
    )
    .unwrap();
    p
}

#[test]
fn validate_accepts_the_clean_fixture() {
    let out = run(&["validate", "--data", toy()]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("config "), "{text}");
    assert!(text.contains("0 error(s)"), "{text}");
}

#[test]
fn validate_rejects_garbage_with_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    let out = run(&["validate", "--data", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).starts_with("error:"), "{}", stderr(&out));
}

#[test]
fn missing_data_file_is_a_data_error() {
    let out = run(&["train", "--data", "/no/such/file.json", "--metapaths", "PAP", "--out", "/tmp/x"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_flags_are_usage_errors() {
    let out = run(&["train", "--no-such-flag"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).to_lowercase().contains("usage"), "{}", stderr(&out));
}

#[test]
fn analyze_reports_the_disjoint_overlap_row() {
    let out = run(&["analyze", "--data", toy(), "--metapaths", "PAP,PSP"]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("jaccard\tPAP\tPSP\t0\n"), "{text}");
    assert!(text.contains("edges\tPAP\t\t2\n"), "{text}");
    assert!(text.contains("homophily\tPAP\t\t0.5\n"), "{text}");
}

#[test]
fn materialize_writes_edge_lists() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("m");
    let out = run(&[
        "materialize",
        "--data",
        toy(),
        "--metapaths",
        "PAP,PSP",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("PAP\tedges\t2\tinstances\t2"));
    let pap = fs::read_to_string(out_dir.join("PAP.tsv")).unwrap();
    assert_eq!(pap, "u\tv\tcount\np0\tp1\t1\np1\tp2\t1\n");
    let psp = fs::read_to_string(out_dir.join("PSP.tsv")).unwrap();
    assert_eq!(psp, "u\tv\tcount\np0\tp2\t1\n");
}

#[test]
fn integrate_writes_membership_bits() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("i");
    let out = run(&[
        "integrate",
        "--data",
        toy(),
        "--metapaths",
        "PAP,PSP",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let table = fs::read_to_string(out_dir.join("integrated.tsv")).unwrap();
    assert_eq!(table, "u\tv\te_bits\np0\tp1\t10\np0\tp2\t01\np1\tp2\t10\n");
}

#[test]
fn train_produces_the_full_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("run");
    let out = run(&[
        "train",
        "--data",
        toy(),
        "--metapaths",
        "PAP,PSP",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--dump-augmented",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    for name in [
        "embeddings.csv",
        "log.jsonl",
        "run_info.json",
        "checkpoint.bin",
        "checkpoint.json",
        "augmented.tsv",
    ] {
        assert!(out_dir.join(name).is_file(), "missing {name}");
    }

    // Five epochs logged, one JSON object per line.
    let log = fs::read_to_string(out_dir.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 5);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("j_step1").is_some());
    }

    // The reported config hash shows up in both stdout and run_info.
    let text = stdout(&out);
    let hash = text
        .lines()
        .next()
        .unwrap()
        .strip_prefix("config ")
        .unwrap()
        .to_string();
    let info: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("run_info.json")).unwrap()).unwrap();
    assert_eq!(info["config_hash"], serde_json::json!(hash));
    assert_eq!(info["epochs"], serde_json::json!(5));
    assert_eq!(info["metapaths"], serde_json::json!(["PAP=PA,~PA", "PSP=PS,~PS"]));

    // Embeddings: three targets, four columns each.
    let csv = fs::read_to_string(out_dir.join("embeddings.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("id,e0,e1,e2,e3"));
    assert_eq!(lines.clone().count(), 3);
    assert!(lines.all(|l| l.split(',').count() == 5));

    // The augmented dump covers the integrated edges.
    let aug = fs::read_to_string(out_dir.join("augmented.tsv")).unwrap();
    assert!(aug.starts_with("u\tv\te_bits\tomega\tp\n"), "{aug}");
    assert_eq!(aug.lines().count(), 4);
}

#[test]
fn identical_invocations_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "train",
            "--data",
            toy(),
            "--metapaths",
            "PAP,PSP",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "42",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
        outputs.push(out_dir);
    }
    for name in [
        "embeddings.csv",
        "log.jsonl",
        "run_info.json",
        "checkpoint.bin",
        "checkpoint.json",
    ] {
        let a = fs::read(outputs[0].join(name)).unwrap();
        let b = fs::read(outputs[1].join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    // A different seed must actually change the embeddings.
    let other = dir.path().join("c");
    let out = run(&[
        "train",
        "--data",
        toy(),
        "--metapaths",
        "PAP,PSP",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "43",
        "--out",
        other.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let a = fs::read(outputs[0].join("embeddings.csv")).unwrap();
    let c = fs::read(other.join("embeddings.csv")).unwrap();
    assert_ne!(a, c, "seed change did not affect the embeddings");
}

#[test]
fn eval_scores_stored_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("run");
    let out = run(&[
        "train",
        "--data",
        toy(),
        "--metapaths",
        "PAP,PSP",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let embeddings = out_dir.join("embeddings.csv");

    let out = run(&[
        "eval",
        "classify",
        "--embeddings",
        embeddings.to_str().unwrap(),
        "--data",
        toy(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let body = stdout(&out);
    let json = body.split_once('\n').unwrap().1;
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    let micro = v["micro_f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&micro), "{micro}");

    let metrics_dir = dir.path().join("metrics");
    let out = run(&[
        "eval",
        "cluster",
        "--embeddings",
        embeddings.to_str().unwrap(),
        "--data",
        toy(),
        "--out",
        metrics_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(metrics_dir.join("cluster.json")).unwrap())
            .unwrap();
    assert!(v["nmi"].as_f64().is_some());
    assert!(v["ari"].as_f64().is_some());
}

#[test]
fn sensitivity_writes_report_and_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out_dir = dir.path().join("study");
    let out = run(&[
        "sensitivity",
        "--data",
        toy(),
        "--metapaths",
        "PAP,PSP",
        "--config",
        cfg.to_str().unwrap(),
        "--runs",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    // {PAP}, {PSP}, {PAP, PSP}.
    assert_eq!(report["combinations"].as_array().unwrap().len(), 3);
    assert_eq!(report["runs_per_combination"], serde_json::json!(1));
    let ranking = fs::read_to_string(out_dir.join("ranking.tsv")).unwrap();
    assert!(ranking.starts_with("rank\tmetapaths\t"), "{ranking}");
    assert!(ranking.contains("PAP+PSP"), "{ranking}");
}
