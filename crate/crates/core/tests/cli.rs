//! End-to-end checks of the `mde` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn mde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mde")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Ring of 8 entities with two relations plus a few test triples.
fn toy_dataset(dir: &Path) {
    let mut train = String::new();
    for i in 0..8 {
        train += &format!("e{i}\tnext\te{}\n", (i + 1) % 8);
        train += &format!("e{}\tprev\te{i}\n", (i + 1) % 8);
    }
    fs::write(dir.join("train.tsv"), train).unwrap();
    fs::write(dir.join("test.tsv"), "e0\tnext\te1\ne3\tprev\te2\ne5\tnext\te6\n").unwrap();
}

fn train_toy(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let train = dir.join("train.tsv");
    let output = dir.join(out);
    let mut args = vec![
        "train",
        "--train",
        train.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--dim",
        "8",
        "--batch-size",
        "4",
    ];
    args.extend_from_slice(extra);
    mde(&args)
}

#[test]
fn missing_dataset_names_the_file() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nowhere.tsv");
    let out = dir.path().join("run");
    let o = mde(&["train", "--train", missing.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.tsv"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(mde(&["train", "--no-such-flag"]).status.code(), Some(1));
}

#[test]
fn train_writes_checkpoint_log_and_manifest() {
    let dir = TempDir::new().unwrap();
    toy_dataset(dir.path());
    let o = train_toy(dir.path(), "run", &["--epochs", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("run");
    assert!(run.join("model.ckpt").is_file());
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 6, "header plus one row per epoch");
    assert!(stdout(&o).contains("epochs = 5"));
}

#[test]
fn seeded_runs_give_identical_checkpoints() {
    let dir = TempDir::new().unwrap();
    toy_dataset(dir.path());
    for out in ["a", "b"] {
        let o = train_toy(dir.path(), out, &["--epochs", "2", "--seed", "7"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read(dir.path().join("a/model.ckpt")).unwrap();
    let b = fs::read(dir.path().join("b/model.ckpt")).unwrap();
    assert_eq!(a, b);
}

fn mrr_of(block: &str) -> f64 {
    block
        .lines()
        .find_map(|l| l.strip_prefix("mrr = "))
        .expect("mrr line")
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn evaluate_reports_raw_and_filtered() {
    let dir = TempDir::new().unwrap();
    toy_dataset(dir.path());
    assert!(train_toy(dir.path(), "run", &["--epochs", "20"]).status.success());
    let ckpt = dir.path().join("run/model.ckpt");
    let csv = dir.path().join("eval.csv");
    let o = mde(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--test",
        dir.path().join("test.tsv").to_str().unwrap(),
        "--train",
        dir.path().join("train.tsv").to_str().unwrap(),
        "--setting",
        "raw,filtered",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let raw = text.split("[raw both]").nth(1).expect("raw block");
    let filtered = text.split("[filtered both]").nth(1).expect("filtered block");
    let raw = raw.split('[').next().unwrap();
    assert!(mrr_of(filtered) >= mrr_of(raw), "{text}");
    assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 3);
}

#[test]
fn evaluate_rejects_unknown_names() {
    let dir = TempDir::new().unwrap();
    toy_dataset(dir.path());
    assert!(train_toy(dir.path(), "run", &["--epochs", "1"]).status.success());
    let stray = dir.path().join("stray.tsv");
    fs::write(&stray, "e0\tnext\tstranger\n").unwrap();
    let o = mde(&[
        "evaluate",
        "--checkpoint",
        dir.path().join("run/model.ckpt").to_str().unwrap(),
        "--test",
        stray.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("vocabulary mismatch"), "{}", stderr(&o));
}

#[test]
fn corrupted_version_is_diagnosed() {
    let dir = TempDir::new().unwrap();
    toy_dataset(dir.path());
    assert!(train_toy(dir.path(), "run", &["--epochs", "1"]).status.success());
    let ckpt = dir.path().join("run/model.ckpt");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
    fs::write(&ckpt, bytes).unwrap();
    let o = mde(&["inspect", ckpt.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("version 99"), "{}", stderr(&o));
}

#[test]
fn inspect_prints_header() {
    let dir = TempDir::new().unwrap();
    toy_dataset(dir.path());
    assert!(train_toy(dir.path(), "run", &["--epochs", "1"]).status.success());
    let o = mde(&["inspect", dir.path().join("run/model.ckpt").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("dim = 8"), "{text}");
    assert!(text.contains("entities = 8"), "{text}");
    assert!(text.contains("relations = 2"), "{text}");
}

#[test]
fn generate_synthetic_is_disjoint_and_repeatable() {
    let dir = TempDir::new().unwrap();
    let gen = |out: &str| {
        let path = dir.path().join(out);
        let o = mde(&[
            "generate-synthetic",
            "--pattern",
            "symmetry",
            "--entities",
            "40",
            "--density",
            "0.1",
            "--seed",
            "3",
            "--output",
            path.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        path
    };
    let (a, b) = (gen("a"), gen("b"));
    for f in ["train.tsv", "holdout.tsv", "manifest.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let train = fs::read_to_string(a.join("train.tsv")).unwrap();
    let holdout = fs::read_to_string(a.join("holdout.tsv")).unwrap();
    assert!(!holdout.is_empty());
    for line in holdout.lines() {
        assert!(!train.lines().any(|l| l == line), "{line} in both files");
    }
}

#[test]
fn composition_needs_three_relations() {
    let dir = TempDir::new().unwrap();
    let o = mde(&[
        "generate-synthetic",
        "--pattern",
        "composition",
        "--relations",
        "2",
        "--output",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn fit_ground_truth_reports_separation() {
    let dir = TempDir::new().unwrap();
    let facts = dir.path().join("facts.tsv");
    fs::write(&facts, "a\tr\tb\nb\tr\tc\n").unwrap();
    let o = mde(&["fit-ground-truth", "--facts", facts.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("facts = 2"), "{text}");
    assert!(text.contains("non_facts = 7"), "{text}");
    assert!(text.contains("separated = "), "{text}");
}

/// Loss history should settle on a small, clean dataset.
#[test]
fn training_loss_decreases_on_toy_data() {
    let dir = TempDir::new().unwrap();
    toy_dataset(dir.path());
    let o = train_toy(dir.path(), "run", &["--epochs", "60", "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = fs::read_to_string(dir.path().join("run/train_log.csv")).unwrap();
    let header: Vec<&str> = log.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "total").expect("total column");
    let totals: Vec<f64> = log.lines().skip(1).map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    let head: f64 = totals[..10].iter().sum();
    let tail: f64 = totals[totals.len() - 10..].iter().sum();
    assert!(tail < head, "first ten {head}, last ten {tail}");
    assert!(totals.iter().all(|x| x.is_finite()));
}
