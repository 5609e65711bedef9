//! End-to-end checks of the CLI surface: subcommands, config validation,
//! exit codes, and artifact layout.

use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sverl-lab"))
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

const TRAIN_SMALL: &str = r#"
scenario = "train"
seeds = [1, 2]

[run.trainer]
mode = "external"
steps = 10
group_size = 4
prompts_per_step = 1
learning_rate = 0.2

[run.env]
preset = "demo"

[run.verifier]
kind = "oracle"
"#;

#[test]
fn theory_small_grid_passes_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("theory.toml");
    write(
        &cfg,
        "scenario = \"theory\"\npoints_var = 8\npoints_mse = 8\ntrials_var = 20000\ntrials_mse = 5000\nseed = 3\n",
    );
    let out = dir.path().join("out");
    let status = bin()
        .args(["theory", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(out.join("theory_points.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
    assert!(out.join("summary.json").exists());
}

#[test]
fn partition_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["partition-check", "--seed", "5", "--out"])
        .arg(dir.path().join("pc"))
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn unknown_config_keys_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    write(&cfg, "scenario = \"theory\"\nnot_a_key = 1\n");
    let status = bin().args(["theory", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn scenario_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    write(&cfg, TRAIN_SMALL);
    let status = bin().args(["theory", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn train_report_and_reproduce_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.toml");
    write(&cfg, TRAIN_SMALL);
    let out = dir.path().join("out");
    let status = bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("seed-1").join("metrics.jsonl").exists());
    assert!(out.join("summary.csv").exists());

    let status = bin()
        .args(["report", "--reproduce", "--run"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    // Tampered summaries are an assertion failure.
    let summary = out.join("summary.csv");
    let text = fs::read_to_string(&summary).unwrap().replace("steps,10", "steps,11");
    write(&summary, &text);
    let status = bin().args(["report", "--run"]).arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn single_cell_sweep_matches_plain_train() {
    let dir = tempfile::tempdir().unwrap();
    let train_cfg = dir.path().join("train.toml");
    write(&train_cfg, TRAIN_SMALL);
    let sweep_cfg = dir.path().join("sweep.toml");
    write(
        &sweep_cfg,
        r#"
scenario = "sweep"

[base]
seeds = [1]

[base.run.trainer]
mode = "external"
steps = 10
group_size = 4
prompts_per_step = 1

[base.run.env]
preset = "demo"

[base.run.verifier]
kind = "oracle"

[grid]
"trainer.learning_rate" = [0.2]
"#,
    );
    let train_out = dir.path().join("train-out");
    let sweep_out = dir.path().join("sweep-out");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&train_cfg)
        .arg("--seed")
        .arg("1")
        .arg("--out")
        .arg(&train_out)
        .status()
        .unwrap()
        .success());
    assert!(bin()
        .args(["sweep", "--config"])
        .arg(&sweep_cfg)
        .arg("--out")
        .arg(&sweep_out)
        .status()
        .unwrap()
        .success());
    let plain = fs::read(train_out.join("seed-1").join("metrics.jsonl")).unwrap();
    let cell = fs::read(sweep_out.join("cell-000").join("seed-1").join("metrics.jsonl")).unwrap();
    assert_eq!(plain, cell, "a one-cell sweep must reproduce the plain run bit for bit");
}

#[test]
fn sweep_rejects_undeclared_keys_and_oversized_grids() {
    let dir = tempfile::tempdir().unwrap();
    let base = r#"
scenario = "sweep"
CAP
[base]
seeds = [1]
[base.run.trainer]
mode = "external"
steps = 5
[base.run.env]
preset = "demo"
[base.run.verifier]
kind = "oracle"
[grid]
GRID
"#;
    let bad_key = base.replace("CAP", "").replace("GRID", "\"trainer.bogus\" = [1.0]");
    let cfg = dir.path().join("bad-key.toml");
    write(&cfg, &bad_key);
    let status = bin().args(["sweep", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(2));

    let too_big = base
        .replace("CAP", "cell_cap = 4")
        .replace("GRID", "\"trainer.learning_rate\" = [0.1, 0.2, 0.3, 0.4, 0.5]");
    let cfg = dir.path().join("too-big.toml");
    write(&cfg, &too_big);
    let status = bin().args(["sweep", "--config"]).arg(&cfg).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn out_root_honors_the_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["partition-check", "--seed", "2"])
        .env("SVERL_LAB_OUT", dir.path())
        .current_dir(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(dir.path().join("partition-check").join("partition_checks.csv").exists());
}
