use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use misgan_lab::checkpoint::Checkpoint;
use misgan_lab::dataset::{GroundTruth, IncompleteDataset};
use serde_json::Value;
use tempfile::TempDir;

const RING_DROPOUT: &str =
    r#"{"toy": {"toy": "ring"}, "mechanism": {"mechanism": "dropout", "rate": 0.5}}"#;

fn misgan_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_misgan-lab"))
        .args(args)
        .output()
        .unwrap()
}

fn run_task(task: &str, config: &Path, extra: &[&str]) -> Output {
    let mut args = vec![task, "--config", config.to_str().unwrap()];
    args.extend_from_slice(extra);
    misgan_lab(&args)
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// A pipeline config: ring data, a short MisGAN run and a short joint
/// imputer run.
fn pipeline(dir: &Path, seed: u64, out: &str, data: &str) -> PathBuf {
    let text = format!(
        r#"{{
          "seed": {seed},
          "output_dir": "{out}",
          "make_data": {{"toy": {{"toy": "ring"}}, "count": 400,
                        "mechanism": {{"mechanism": "dropout", "rate": 0.5}}}},
          "train": {{"dataset": "{data}", "model": {{"generator_hidden": [8], "critic_hidden": [8]}},
                    "train": {{"total_steps": 30, "log_every": 10, "eval_samples": 200}},
                    "tv_reference": {RING_DROPOUT}}},
          "impute_train": {{"dataset": "{data}", "model": {{"generator_hidden": [8], "critic_hidden": [8]}},
                           "imputer": {{"hidden": [8], "critic_hidden": [8]}},
                           "train": {{"total_steps": 20, "log_every": 10}}}},
          "impute_run": {{"dataset": "{data}", "checkpoint": "{out}/checkpoint.json"}},
          "eval": {{"reference": "data/ground_truth.bin", "imputed": "{out}/imputed.bin",
                   "samples": "{out}/imputed.bin", "ground_truth": "data/ground_truth.bin"}}
        }}"#
    );
    write_config(dir, &format!("{out}.json"), &text)
}

fn make_data(dir: &Path) {
    let cfg = pipeline(dir, 5, "data", "data/data.bin");
    let out = run_task("make-data", &cfg, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let cfg = pipeline(dir.path(), 1, "out", "data/data.bin");
    assert_eq!(code(&run_task("sharpen", &cfg, &[])), 1);
    assert_eq!(code(&misgan_lab(&["train"])), 1);
    assert_eq!(
        code(&run_task("train", &dir.path().join("nope.json"), &[])),
        1
    );
    let bad = write_config(
        dir.path(),
        "bad.json",
        r#"{"output_dir": "o", "colour": 1}"#,
    );
    assert_eq!(code(&run_task("identify", &bad, &[])), 1);
    let wrong = write_config(
        dir.path(),
        "wrong.json",
        r#"{"task": "eval", "output_dir": "o"}"#,
    );
    assert_eq!(code(&run_task("train", &wrong, &[])), 1);
    assert_eq!(code(&misgan_lab(&["--help"])), 0);
}

#[test]
fn missing_dataset_exits_one_and_writes_nothing() {
    let dir = TempDir::new().unwrap();
    let cfg = pipeline(dir.path(), 1, "out", "data/absent.bin");
    let out = run_task("train", &cfg, &[]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.bin"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn corrupt_dataset_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    fs::create_dir(dir.path().join("data")).unwrap();
    fs::write(dir.path().join("data/data.bin"), b"not a dataset").unwrap();
    let cfg = pipeline(dir.path(), 1, "out", "data/data.bin");
    assert_eq!(code(&run_task("train", &cfg, &[])), 2);
    let leftovers: Vec<_> = fs::read_dir(dir.path().join("out"))
        .map(|it| it.map(|e| e.unwrap().file_name()).collect())
        .unwrap_or_default();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn existing_outputs_need_force() {
    let dir = TempDir::new().unwrap();
    make_data(dir.path());
    let cfg = dir.path().join("data.json");
    let before = fs::read(dir.path().join("data/data.bin")).unwrap();
    assert_eq!(code(&run_task("make-data", &cfg, &[])), 1);
    assert_eq!(
        code(&run_task("make-data", &cfg, &["--force", "--seed", "6"])),
        0
    );
    assert_ne!(before, fs::read(dir.path().join("data/data.bin")).unwrap());
}

#[test]
fn identify_reports_tau_invariant_null_space() {
    let dir = TempDir::new().unwrap();
    // One binary coordinate, always missing: the two states are
    // indistinguishable.
    let cfg = write_config(
        dir.path(),
        "id.json",
        r#"{"output_dir": "out",
            "identify": {"alphabet": [0, 1], "n": 1, "q": [1.0, 0.0], "p_star": [0.5, 0.5]}}"#,
    );
    assert_eq!(code(&run_task("identify", &cfg, &[])), 0);
    let report: Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out/identify_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["nullspace_dim"], 1);
    assert_eq!(report["tau_invariance"], true);
}

#[test]
fn make_data_dropout_rate_is_close_to_target() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "d.json",
        r#"{"seed": 9, "output_dir": "out",
            "make_data": {"toy": {"toy": "bars"}, "count": 10000,
                          "mechanism": {"mechanism": "dropout", "rate": 0.9}}}"#,
    );
    assert_eq!(code(&run_task("make-data", &cfg, &[])), 0);
    let data = IncompleteDataset::read(&dir.path().join("out/data.bin")).unwrap();
    assert_eq!(data.len(), 10_000);
    assert!(
        (data.missing_rate() - 0.9).abs() <= 0.01,
        "{}",
        data.missing_rate()
    );
    let truth = GroundTruth::read(&dir.path().join("out/ground_truth.bin")).unwrap();
    assert_eq!(truth.rows.len(), 10_000);
}

#[test]
fn fixed_seed_reproduces_every_output() {
    let dir = TempDir::new().unwrap();
    make_data(dir.path());
    let cfg = pipeline(dir.path(), 3, "out", "data/data.bin");
    let files = [
        "metrics.csv",
        "checkpoint.json",
        "imputed.bin",
        "report.json",
    ];
    let mut passes = Vec::new();
    for _ in 0..2 {
        for task in ["train", "impute-train", "impute-run", "eval"] {
            let res = run_task(task, &cfg, &["--force"]);
            assert_eq!(
                code(&res),
                0,
                "{task}: {}",
                String::from_utf8_lossy(&res.stderr)
            );
        }
        passes.push(files.map(|f| fs::read(dir.path().join("out").join(f)).unwrap()));
    }
    for (k, file) in files.iter().enumerate() {
        assert!(passes[0][k] == passes[1][k], "{file} differs");
    }
    let csv = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn resumed_training_matches_a_single_run() {
    let dir = TempDir::new().unwrap();
    make_data(dir.path());
    let whole = pipeline(dir.path(), 4, "whole", "data/data.bin");
    assert_eq!(code(&run_task("train", &whole, &[])), 0);

    let text = fs::read_to_string(&whole).unwrap();
    let half = text
        .replace("\"whole\"", "\"half\"")
        .replace("\"total_steps\": 30", "\"total_steps\": 20");
    let half = write_config(dir.path(), "half.json", &half);
    assert_eq!(code(&run_task("train", &half, &[])), 0);
    let rest = text.replace("\"whole\"", "\"rest\"").replace(
        "\"tv_reference\"",
        "\"resume_from\": \"half/checkpoint.json\", \"tv_reference\"",
    );
    let rest = write_config(dir.path(), "rest.json", &rest);
    let out = run_task("train", &rest, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // The stored config snapshots differ in their paths.
    let ck = |run: &str| {
        let mut ck = Checkpoint::load(&dir.path().join(run).join("checkpoint.json")).unwrap();
        ck.config = Value::Null;
        ck.to_json()
    };
    assert!(ck("whole") == ck("rest"));
    let csv = |run: &str| fs::read_to_string(dir.path().join(run).join("metrics.csv")).unwrap();
    let whole_rows: Vec<String> = csv("whole").lines().map(String::from).collect();
    assert_eq!(
        csv("rest").lines().last(),
        whole_rows.last().map(String::as_str)
    );
}
