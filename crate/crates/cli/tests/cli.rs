use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ptransr(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptransr"))
        .current_dir(cwd)
        .env_remove("PTRANSR_DATA_DIR")
        .env("RUST_BACKTRACE", "0")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(cwd: &Path, args: &[&str]) -> String {
    let out = ptransr(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Synthetic dataset prepared into `data/` with a path table.
fn prepared(dir: &Path) {
    ok(dir, &["synth-kg", "--out", "kg", "--seed", "3"]);
    ok(
        dir,
        &["prepare", "--train", "kg/train.tsv", "--valid", "kg/valid.tsv", "--test", "kg/test.tsv", "--out", "data"],
    );
    ok(dir, &["extract-paths", "--data", "data"]);
}

const QUICK: &[&str] = &[
    "--epochs",
    "3",
    "--entity-dim",
    "8",
    "--relation-dim",
    "8",
    "--batch-size",
    "64",
    "--set",
    "warm_epochs=5",
];

#[test]
fn synth_kg_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth-kg", "--out", "a", "--seed", "9"]);
    ok(dir.path(), &["synth-kg", "--out", "b", "--seed", "9"]);
    for f in ["train.tsv", "valid.tsv", "test.tsv", "synth.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap());
    }
}

#[test]
fn prepare_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    fs::create_dir(&raw).unwrap();
    fs::write(raw.join("train.txt"), "a\tb\tr\nb\tc\tr\nc\ta\ts\n").unwrap();
    fs::write(raw.join("valid.txt"), "a\tc\ts\n").unwrap();
    fs::write(raw.join("test.txt"), "d\ta\tr\n").unwrap();
    let out = ok(
        dir.path(),
        &["prepare", "--train", "raw/train.txt", "--valid", "raw/valid.txt", "--test", "raw/test.txt", "--order", "htr", "--out", "data"],
    );
    assert!(out.contains("entities") && out.contains('4'));
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("data/stats.json")).unwrap()).unwrap();
    assert_eq!(stats["entities"], 4);
    assert_eq!(stats["relations"], 2);
    assert_eq!(stats["train"], 3);
    assert!(dir.path().join("data/entity2id.tsv").is_file());
    assert_eq!(fs::read_to_string(dir.path().join("data/train.tsv")).unwrap().lines().next(), Some("a\tr\tb"));
}

#[test]
fn extract_paths_is_deterministic_and_respects_floor() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    ok(dir.path(), &["extract-paths", "--data", "data", "--out", "again.ptbl"]);
    assert_eq!(fs::read(dir.path().join("data/paths.ptbl")).unwrap(), fs::read(dir.path().join("again.ptbl")).unwrap());

    let out = ok(dir.path(), &["extract-paths", "--data", "data", "--floor", "1.0", "--out", "none.ptbl"]);
    assert!(out.contains(" 0 pairs, 0 paths"), "{out}");
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("none.json")).unwrap()).unwrap();
    assert_eq!(meta["entries"], 0);
    assert_eq!(meta["floor"], 1.0);

    let all: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("data/paths.json")).unwrap()).unwrap();
    ok(dir.path(), &["extract-paths", "--data", "data", "--floor", "0", "--out", "all.ptbl"]);
    let zero: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("all.json")).unwrap()).unwrap();
    assert_eq!(zero["filtered_entries"], 0);
    assert!(zero["entries"].as_u64().unwrap() >= all["entries"].as_u64().unwrap());
}

#[test]
fn bad_floor_rejected_without_output() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let out = ptransr(dir.path(), &["extract-paths", "--data", "data", "--floor", "1.5", "--out", "bad.ptbl"]);
    assert!(!out.status.success());
    assert!(!dir.path().join("bad.ptbl").exists());
}

#[test]
fn ptransr_without_path_table_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let out = ptransr(dir.path(), &["train", "--data", "data", "--stage", "ptransr", "--paths", "missing.ptbl", "--out", "run"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing.ptbl"), "{err}");
    assert!(!dir.path().join("run").exists());
}

#[test]
fn two_stage_pipeline_and_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let d = dir.path();
    let mut args = vec!["train", "--data", "data", "--stage", "transe", "--out", "warm"];
    args.extend_from_slice(QUICK);
    ok(d, &args);
    let mut args = vec!["train", "--data", "data", "--stage", "ptransr", "--init", "warm/model.ptrm", "--out", "main"];
    args.extend_from_slice(QUICK);
    ok(d, &args);
    let config = fs::read_to_string(d.join("main/config.txt")).unwrap();
    assert!(config.contains("stage=ptransr") && config.contains("epochs=3"));
    let log = fs::read_to_string(d.join("main/train.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let out = ok(
        d,
        &["evaluate", "--data", "data", "--model", "main/model.ptrm", "--paths", "data/paths.ptbl", "--rerank-k", "20", "--out", "ev"],
    );
    assert!(out.contains("Hits@10") && out.contains("N-to-1"), "{out}");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ev/report.json")).unwrap()).unwrap();
    assert!(report["hits10_filter"].as_f64().unwrap() >= report["hits10_raw"].as_f64().unwrap());
    assert_eq!(report["rerank_k"], 20);
    assert!(d.join("ev/ranks.csv").is_file() && d.join("ev/config.json").is_file());

    let inspect = ok(
        d,
        &["inspect", "--data", "data", "--model", "main/model.ptrm", "--entity", "e0", "--relation", "r2", "--paths", "data/paths.ptbl"],
    );
    assert!(inspect.contains("nearest entities to e0"));
    assert!(inspect.contains("r0 -> r1"), "{inspect}");
}

#[test]
fn training_is_byte_identical_on_one_worker() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    for run in ["a", "b"] {
        let mut args = vec!["--workers", "1", "train", "--data", "data", "--stage", "ptransr", "--out", run];
        args.extend_from_slice(QUICK);
        ok(dir.path(), &args);
    }
    for f in ["model.ptrm", "config.txt"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let ev = |out: &str| {
        ok(dir.path(), &["evaluate", "--data", "data", "--model", "a/model.ptrm", "--paths", "data/paths.ptbl", "--out", out]);
    };
    ev("ev1");
    ev("ev2");
    for f in ["report.json", "report.txt", "ranks.csv", "config.json"] {
        assert_eq!(fs::read(dir.path().join("ev1").join(f)).unwrap(), fs::read(dir.path().join("ev2").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn default_run_directory_carries_seed() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let mut args = vec!["train", "--data", "data", "--stage", "transe", "--seed", "42", "--runs", "runs"];
    args.extend_from_slice(QUICK);
    ok(dir.path(), &args);
    let runs: Vec<String> = fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(runs.len(), 1);
    assert!(runs[0].starts_with("run-") && runs[0].ends_with("-seed42"), "{runs:?}");
}

#[test]
fn data_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    prepared(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_ptransr"))
        .current_dir(dir.path())
        .env("PTRANSR_DATA_DIR", "data")
        .args(["extract-paths", "--out", "env.ptbl"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("env.ptbl").is_file());
}
