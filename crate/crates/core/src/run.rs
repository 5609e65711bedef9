//! Run artifacts: manifests, metrics files, summaries, and byte-exact
//! reproduction.
//!
//! Every training run writes a `manifest.json` holding the full resolved
//! configuration, the seed, and (for warm starts) the initial checkpoint:
//! enough to re-execute the run and demand bit-identical metrics. Metrics
//! are one JSON object per step; summaries are small `run,metric,value`
//! CSV files recomputable from the raw JSONL.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::policy::{Checkpoint, PolicyParams};
use crate::trainer::{RunConfig, StepMetrics, TrainOutcome, Trainer, TrainerError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error("bad run artifact: {0}")]
    Artifact(String),
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint_final.json";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Manifest of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub scenario: String,
    pub seed: u64,
    pub config: RunConfig,
    /// Warm-start parameters, inline so the run is self-contained.
    pub init_checkpoint: Option<Checkpoint>,
    pub config_hash: String,
    pub code_version: String,
}

fn hash_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the run's full identity: config, seed, and any warm start.
pub fn config_hash(
    config: &RunConfig,
    seed: u64,
    init: Option<&Checkpoint>,
) -> Result<String, RunError> {
    #[derive(Serialize)]
    struct Identity<'a> {
        config: &'a RunConfig,
        seed: u64,
        init: Option<&'a Checkpoint>,
    }
    let canonical = serde_json::to_vec(&Identity { config, seed, init })?;
    Ok(hash_hex(&canonical))
}

/// One JSON object per step, newline-terminated.
pub fn metrics_jsonl(metrics: &[StepMetrics]) -> Result<String, RunError> {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_metrics_jsonl(text: &str) -> Result<Vec<StepMetrics>, RunError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(RunError::from))
        .collect()
}

/// Execute one run in memory.
pub fn execute(
    config: &RunConfig,
    seed: u64,
    init: Option<&Checkpoint>,
) -> Result<TrainOutcome, RunError> {
    let init_params = init
        .map(PolicyParams::from_checkpoint)
        .transpose()
        .map_err(RunError::Artifact)?;
    Ok(Trainer::new(config, seed, init_params)?.run()?)
}

/// Execute one run and write its artifacts under `dir`.
pub fn write_run(
    dir: &Path,
    scenario: &str,
    config: &RunConfig,
    seed: u64,
    init: Option<&Checkpoint>,
) -> Result<TrainOutcome, RunError> {
    let outcome = execute(config, seed, init)?;
    fs::create_dir_all(dir)?;
    let manifest = RunManifest {
        schema: 1,
        scenario: scenario.to_string(),
        seed,
        config: config.clone(),
        init_checkpoint: init.cloned(),
        config_hash: config_hash(config, seed, init)?,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(dir.join(METRICS_FILE), metrics_jsonl(&outcome.metrics)?)?;
    fs::write(
        dir.join(CHECKPOINT_FILE),
        serde_json::to_string(&outcome.final_params.to_checkpoint())?,
    )?;
    for (step, checkpoint) in &outcome.checkpoints {
        fs::write(
            dir.join(format!("checkpoint_step_{step:06}.json")),
            serde_json::to_string(checkpoint)?,
        )?;
    }
    Ok(outcome)
}

/// Re-execute a written run from its manifest and compare the metrics
/// bytes. Returns the reproduced text on success.
pub fn reproduce(run_dir: &Path) -> Result<(), RunError> {
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(run_dir.join(MANIFEST_FILE))?)?;
    let expected = config_hash(&manifest.config, manifest.seed, manifest.init_checkpoint.as_ref())?;
    if manifest.config_hash != expected {
        return Err(RunError::Artifact(format!(
            "manifest hash {} does not match its own config ({expected})",
            manifest.config_hash
        )));
    }
    let outcome = execute(&manifest.config, manifest.seed, manifest.init_checkpoint.as_ref())?;
    let reproduced = metrics_jsonl(&outcome.metrics)?;
    let recorded = fs::read_to_string(run_dir.join(METRICS_FILE))?;
    if reproduced != recorded {
        return Err(RunError::Artifact(format!(
            "metrics differ from manifest replay in {}",
            run_dir.display()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Warmup length of the fixed post-warmup metrics: the first fifth of the
/// run.
pub fn warmup_steps(total: usize) -> usize {
    total / 5
}

/// Endpoint window of the leading/trailing summary means: a tenth of the
/// run, clamped to 5..=50 steps. A single step scores only a handful of
/// prompts, so endpoint rates need averaging.
pub fn endpoint_window(total: usize) -> usize {
    (total / 10).clamp(5, 50).min(total)
}

/// Deterministic per-run summary rows computed from raw metrics.
pub fn summarize(metrics: &[StepMetrics]) -> Vec<(String, f64)> {
    assert!(!metrics.is_empty());
    let window = endpoint_window(metrics.len());
    let tail = metrics.len() - window;
    let warm = warmup_steps(metrics.len());
    let mut rows = vec![
        ("steps".to_string(), metrics.len() as f64),
        ("step0_mean_reward".to_string(), metrics[0].mean_reward),
        ("final_mean_reward".to_string(), metrics[metrics.len() - 1].mean_reward),
        (
            "leading_mean_reward".to_string(),
            mean(metrics[..window].iter().map(|m| m.mean_reward)).unwrap(),
        ),
        (
            "trailing_mean_reward".to_string(),
            mean(metrics[tail..].iter().map(|m| m.mean_reward)).unwrap(),
        ),
        ("step0_oracle_strict".to_string(), metrics[0].oracle_strict_rate),
        (
            "final_oracle_strict".to_string(),
            metrics[metrics.len() - 1].oracle_strict_rate,
        ),
        (
            "leading_oracle_strict".to_string(),
            mean(metrics[..window].iter().map(|m| m.oracle_strict_rate)).unwrap(),
        ),
        (
            "trailing_oracle_strict".to_string(),
            mean(metrics[tail..].iter().map(|m| m.oracle_strict_rate)).unwrap(),
        ),
        (
            "trailing_oracle_soft".to_string(),
            mean(metrics[tail..].iter().map(|m| m.oracle_soft_mean)).unwrap(),
        ),
        (
            "mean_verifier_calls".to_string(),
            mean(metrics.iter().map(|m| m.verifier_calls as f64)).unwrap(),
        ),
    ];
    if let Some(v) = mean(metrics[warm..].iter().filter_map(|m| m.yes_rate_failing)) {
        rows.push(("postwarmup_yes_rate_failing".to_string(), v));
    }
    rows
}

/// `run,metric,value` CSV.
pub fn summary_csv(rows: &[(String, Vec<(String, f64)>)]) -> String {
    let mut out = String::from("run,metric,value\n");
    for (run, metrics) in rows {
        for (metric, value) in metrics {
            out.push_str(&format!("{run},{metric},{value}\n"));
        }
    }
    out
}

pub fn parse_summary_csv(text: &str) -> Result<Vec<(String, String, f64)>, RunError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "run,metric,value" {
                return Err(RunError::Artifact("unexpected summary header".into()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let (run, metric, value) = (
            parts.next().ok_or_else(|| RunError::Artifact("short summary row".into()))?,
            parts.next().ok_or_else(|| RunError::Artifact("short summary row".into()))?,
            parts.next().ok_or_else(|| RunError::Artifact("short summary row".into()))?,
        );
        let value: f64 = value
            .parse()
            .map_err(|_| RunError::Artifact(format!("bad value in summary row {i}")))?;
        rows.push((run.to_string(), metric.to_string(), value));
    }
    Ok(rows)
}

/// Recompute every per-run summary row from its raw JSONL and compare
/// against the stored summary (tolerance 1e-9). Rows whose run name has no
/// metrics directory (aggregates) are skipped.
pub fn verify_summary(out_dir: &Path) -> Result<usize, RunError> {
    let stored = parse_summary_csv(&fs::read_to_string(out_dir.join(SUMMARY_FILE))?)?;
    let mut checked = 0usize;
    let mut cache: std::collections::BTreeMap<String, Vec<(String, f64)>> = Default::default();
    for (run, metric, value) in stored {
        let metrics_path = out_dir.join(&run).join(METRICS_FILE);
        if !metrics_path.exists() {
            continue;
        }
        if !cache.contains_key(&run) {
            let metrics = read_metrics_jsonl(&fs::read_to_string(&metrics_path)?)?;
            cache.insert(run.clone(), summarize(&metrics));
        }
        let recomputed = cache[&run]
            .iter()
            .find(|(m, _)| *m == metric)
            .ok_or_else(|| RunError::Artifact(format!("unknown summary metric {metric}")))?
            .1;
        if (recomputed - value).abs() > 1e-9 {
            return Err(RunError::Artifact(format!(
                "summary mismatch for {run}/{metric}: stored {value}, recomputed {recomputed}"
            )));
        }
        checked += 1;
    }
    Ok(checked)
}

/// Subdirectories of `out_dir` that contain a run manifest.
pub fn run_dirs(out_dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(out_dir)? {
        let path = entry?.path();
        if path.is_dir() && path.join(MANIFEST_FILE).exists() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::trainer::{EnvConfig, TrainMode, TrainerConfig, VerifierConfig};

    fn tiny_config() -> RunConfig {
        RunConfig {
            trainer: TrainerConfig {
                mode: TrainMode::External,
                steps: 4,
                group_size: 4,
                prompts_per_step: 1,
                ..TrainerConfig::default()
            },
            env: EnvConfig { family: presets::demo_family(), corruption: None },
            verifier: VerifierConfig::Oracle,
        }
    }

    #[test]
    fn write_and_reproduce_round_trip() {
        let dir = std::env::temp_dir().join(format!("sverl-run-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let run_dir = dir.join("seed-3");
        write_run(&run_dir, "train", &tiny_config(), 3, None).unwrap();
        reproduce(&run_dir).unwrap();
        // Tampering with the metrics must be caught.
        let path = run_dir.join(METRICS_FILE);
        let mut text = fs::read_to_string(&path).unwrap();
        text.push('\n');
        text.push_str(&text.clone().lines().next().unwrap().to_string());
        fs::write(&path, text).unwrap();
        assert!(reproduce(&run_dir).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn summary_round_trips_through_csv() {
        let outcome = execute(&tiny_config(), 9, None).unwrap();
        let rows = vec![("seed-9".to_string(), summarize(&outcome.metrics))];
        let csv = summary_csv(&rows);
        let parsed = parse_summary_csv(&csv).unwrap();
        assert_eq!(parsed.len(), rows[0].1.len());
        for ((run, metric, value), (m, v)) in parsed.iter().zip(&rows[0].1) {
            assert_eq!(run, "seed-9");
            assert_eq!(metric, m);
            assert_eq!(value, v);
        }
    }

    #[test]
    fn verify_summary_catches_drift() {
        let dir = std::env::temp_dir().join(format!("sverl-sum-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        let run_dir = dir.join("seed-5");
        let outcome = write_run(&run_dir, "train", &tiny_config(), 5, None).unwrap();
        let rows = vec![("seed-5".to_string(), summarize(&outcome.metrics))];
        fs::write(dir.join(SUMMARY_FILE), summary_csv(&rows)).unwrap();
        assert!(verify_summary(&dir).unwrap() > 0);
        let mut bad_rows = rows;
        bad_rows[0].1[1].1 += 0.5;
        fs::write(dir.join(SUMMARY_FILE), summary_csv(&bad_rows)).unwrap();
        assert!(verify_summary(&dir).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }
}
