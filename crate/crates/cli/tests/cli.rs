use std::path::Path;
use std::process::{Command, Output};

use structdl::io::{load_labels, load_matrix};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_structdl"))
        .args(args)
        .env("STRUCTDL_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Small nonnegative problem with a train/test split.
fn synth(dir: &Path) {
    ok(&[
        "synth",
        "--classes",
        "3",
        "--dim",
        "20",
        "--atoms-per-class",
        "4",
        "--samples-per-class",
        "30",
        "--sparsity",
        "2",
        "--snr-db",
        "40",
        "--nonnegative",
        "--train-fraction",
        "0.5",
        "--seed",
        "3",
        "--out-dir",
        &p(dir, ""),
    ]);
}

fn train(dir: &Path, mode: &str, out: &str) {
    ok(&[
        "train",
        "--data",
        &p(dir, "train_data.sdlm"),
        "--labels",
        &p(dir, "train_labels.txt"),
        "--atoms-per-class",
        "4",
        "--mode",
        mode,
        "--lambda1",
        "0.05",
        "--lambda2",
        "0.05",
        "--lambda3",
        "0.05",
        "--lambda4",
        "0.05",
        "--fidelity",
        "penalized",
        "--outer-iters",
        "5",
        "--max-iters",
        "200",
        "--out",
        &p(dir, out),
    ]);
}

#[test]
fn synth_writes_consistent_files() {
    let dir = TempDir::new().unwrap();
    let stdout = ok(&[
        "synth",
        "--classes",
        "2",
        "--dim",
        "10",
        "--atoms-per-class",
        "3",
        "--samples-per-class",
        "5",
        "--sparsity",
        "2",
        "--out-dir",
        &p(dir.path(), ""),
    ]);
    assert!(stdout.contains("\"samples\":10"));
    let data = load_matrix(&dir.path().join("data.sdlm")).unwrap();
    let clean = load_matrix(&dir.path().join("clean.sdlm")).unwrap();
    let d = load_matrix(&dir.path().join("dictionary.sdlm")).unwrap();
    let a = load_matrix(&dir.path().join("codes.sdlm")).unwrap();
    assert_eq!(data, clean);
    assert!((&d * &a - &clean).norm() < 1e-12);
    let labels = load_labels(&dir.path().join("labels.txt")).unwrap();
    assert_eq!(labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
}

#[test]
fn training_is_byte_deterministic() {
    let dir = TempDir::new().unwrap();
    synth(dir.path());
    train(dir.path(), "hidl", "a.model");
    train(dir.path(), "hidl", "b.model");
    let a = std::fs::read(dir.path().join("a.model")).unwrap();
    let b = std::fs::read(dir.path().join("b.model")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn encode_then_classify_matches_direct_classify() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    synth(d);
    for mode in ["hidl", "gddl"] {
        let model = format!("{mode}.model");
        train(d, mode, &model);
        let codes = format!("{mode}_codes.sdlm");
        ok(&[
            "encode",
            "--model",
            &p(d, &model),
            "--data",
            &p(d, "test_data.sdlm"),
            "--out",
            &p(d, &codes),
        ]);
        if mode == "gddl" {
            assert!(d.join("gddl_codes.unique.sdlm").exists());
        }
        let direct = format!("{mode}_direct.txt");
        let via = format!("{mode}_via.txt");
        let stdout = ok(&[
            "classify",
            "--model",
            &p(d, &model),
            "--data",
            &p(d, "test_data.sdlm"),
            "--out",
            &p(d, &direct),
            "--truth",
            &p(d, "test_labels.txt"),
        ]);
        assert!(stdout.contains("accuracy"), "{stdout}");
        ok(&[
            "classify",
            "--model",
            &p(d, &model),
            "--codes",
            &p(d, &codes),
            "--out",
            &p(d, &via),
        ]);
        assert_eq!(
            std::fs::read_to_string(d.join(&direct)).unwrap(),
            std::fs::read_to_string(d.join(&via)).unwrap(),
            "{mode}"
        );
    }
}

#[test]
fn config_file_supplies_flags_and_cli_overrides() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    synth(d);
    let cfg = serde_json::json!({
        "data": p(d, "train_data.sdlm"),
        "labels": p(d, "train_labels.txt"),
        "atoms_per_class": 4,
        "lambda1": 0.05,
        "lambda2": 0.05,
        "outer_iters": 50,
        "out": p(d, "cfg.model"),
    });
    std::fs::write(d.join("cfg.json"), cfg.to_string()).unwrap();
    let stdout = ok(&["--config", &p(d, "cfg.json"), "train", "--outer-iters", "2"]);
    let v: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert!(v["iterations"].as_u64().unwrap() <= 2);
    assert!(d.join("cfg.model").exists());
}

#[test]
fn check_reports_condition_and_block_support() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    synth(d);
    train(d, "hidl", "m.model");
    ok(&[
        "encode",
        "--model",
        &p(d, "m.model"),
        "--data",
        &p(d, "test_data.sdlm"),
        "--out",
        &p(d, "c.sdlm"),
    ]);
    ok(&[
        "check",
        "--model",
        &p(d, "m.model"),
        "--codes",
        &p(d, "c.sdlm"),
        "--labels",
        &p(d, "test_labels.txt"),
        "--out",
        &p(d, "check.json"),
    ]);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("check.json")).unwrap()).unwrap();
    assert_eq!(v["condition"]["classes"].as_array().unwrap().len(), 3);
    assert!(v["block_support"]["passed"].is_boolean());
}

#[test]
fn project_normalizes_columns() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    synth(d);
    ok(&[
        "project",
        "--data",
        &p(d, "data.sdlm"),
        "--dim",
        "8",
        "--seed",
        "1",
        "--out",
        &p(d, "y.csv"),
    ]);
    let y = load_matrix(&d.join("y.csv")).unwrap();
    assert_eq!(y.nrows(), 8);
    for c in y.column_iter() {
        assert!((c.norm() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn exit_codes_follow_contract() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(run(&["train"]).status.code(), Some(2));
    assert_eq!(run(&["bogus"]).status.code(), Some(2));
    let missing = run(&[
        "encode",
        "--model",
        &p(d, "none.model"),
        "--data",
        &p(d, "x"),
        "--out",
        &p(d, "y"),
    ]);
    assert_eq!(missing.status.code(), Some(1));
    std::fs::write(d.join("junk.model"), b"not a model").unwrap();
    let junk = run(&["check", "--model", &p(d, "junk.model")]);
    assert_eq!(junk.status.code(), Some(1));
    synth(d);
    let bad_dim = run(&[
        "project",
        "--data",
        &p(d, "data.sdlm"),
        "--dim",
        "0",
        "--out",
        &p(d, "y.sdlm"),
    ]);
    assert_eq!(bad_dim.status.code(), Some(2));
    let bad_lambda = run(&[
        "train",
        "--data",
        &p(d, "train_data.sdlm"),
        "--labels",
        &p(d, "train_labels.txt"),
        "--atoms-per-class",
        "4",
        "--lambda1",
        "-1",
        "--out",
        &p(d, "z.model"),
    ]);
    assert_eq!(bad_lambda.status.code(), Some(2));
    assert!(!d.join("z.model").exists());
}
