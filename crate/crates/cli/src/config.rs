//! Config-file schemas and sweep grid handling. All files are TOML with
//! unknown keys rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use sverl_core::constraint::FamilyConfig;
use sverl_core::checklist::CorruptionPlan;
use sverl_core::presets;
use sverl_core::scenarios::{
    default_checklist_vs_holistic_config, default_collapse_config, ChecklistVsHolisticConfig,
    CollapseConfig,
};
use sverl_core::trainer::{EnvConfig, RunConfig, TrainerConfig, VerifierConfig};

use crate::Failure;

pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| Failure::config(format!("invalid config {}: {e}", path.display())))
}

fn expect_scenario(found: &str, wanted: &str) -> Result<(), Failure> {
    if found == wanted {
        Ok(())
    } else {
        Err(Failure::config(format!(
            "config declares scenario {found:?}, this subcommand runs {wanted:?}"
        )))
    }
}

// ---------------------------------------------------------------------------
// Per-subcommand schemas
// ---------------------------------------------------------------------------

fn default_points_var() -> usize {
    200
}
fn default_points_mse() -> usize {
    500
}
fn default_trials_var() -> u64 {
    100_000
}
fn default_trials_mse() -> u64 {
    20_000
}
fn default_models() -> usize {
    12
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryFile {
    pub scenario: String,
    #[serde(default = "default_points_var")]
    pub points_var: usize,
    #[serde(default = "default_points_mse")]
    pub points_mse: usize,
    #[serde(default = "default_trials_var")]
    pub trials_var: u64,
    #[serde(default = "default_trials_mse")]
    pub trials_mse: u64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TheoryFile {
    fn default() -> Self {
        TheoryFile {
            scenario: "theory".into(),
            points_var: default_points_var(),
            points_mse: default_points_mse(),
            trials_var: default_trials_var(),
            trials_mse: default_trials_mse(),
            seed: 0,
        }
    }
}

pub fn load_theory(path: Option<&Path>) -> Result<TheoryFile, Failure> {
    let file = match path {
        None => TheoryFile::default(),
        Some(p) => read_toml(p)?,
    };
    expect_scenario(&file.scenario, "theory")?;
    Ok(file)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionFile {
    pub scenario: String,
    #[serde(default = "default_models")]
    pub models: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PartitionFile {
    fn default() -> Self {
        PartitionFile { scenario: "partition-check".into(), models: default_models(), seed: 0 }
    }
}

pub fn load_partition(path: Option<&Path>) -> Result<PartitionFile, Failure> {
    let file = match path {
        None => PartitionFile::default(),
        Some(p) => read_toml(p)?,
    };
    expect_scenario(&file.scenario, "partition-check")?;
    Ok(file)
}

/// Environment section: either a named preset or a full inline family.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub family: Option<FamilyConfig>,
    #[serde(default)]
    pub corruption: Option<CorruptionPlan>,
}

impl EnvSpec {
    pub fn resolve(&self) -> Result<EnvConfig, Failure> {
        let family = match (&self.preset, &self.family) {
            (Some(_), Some(_)) => {
                return Err(Failure::config("env takes either a preset or a family, not both".into()))
            }
            (None, None) => {
                return Err(Failure::config("env needs a preset name or an inline family".into()))
            }
            (None, Some(family)) => family.clone(),
            (Some(name), None) => match name.as_str() {
                "mixed" => presets::mixed_family(),
                "demo" => presets::demo_family(),
                "training" => presets::training_family(),
                other => {
                    return Err(Failure::config(format!(
                        "unknown family preset {other:?}; known: mixed, demo, training"
                    )))
                }
            },
        };
        Ok(EnvConfig { family, corruption: self.corruption })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub trainer: TrainerConfig,
    pub env: EnvSpec,
    pub verifier: VerifierConfig,
}

impl RunSpec {
    pub fn resolve(&self) -> Result<RunConfig, Failure> {
        let config = RunConfig {
            trainer: self.trainer,
            env: self.env.resolve()?,
            verifier: self.verifier,
        };
        config.validate().map_err(|e| Failure::config(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub run: RunSpec,
}

pub fn load_train(path: &Path) -> Result<(Vec<u64>, RunConfig), Failure> {
    let file: TrainFile = read_toml(path)?;
    expect_scenario(&file.scenario, "train")?;
    if file.seeds.is_empty() {
        return Err(Failure::config("train needs at least one seed".into()));
    }
    Ok((file.seeds, file.run.resolve()?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseFile {
    pub scenario: String,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub pretrain: Option<RunConfig>,
    #[serde(default)]
    pub naive: Option<RunConfig>,
    #[serde(default)]
    pub sverl: Option<RunConfig>,
}

pub fn load_collapse(path: Option<&Path>, seeds_flag: Option<Vec<u64>>) -> Result<CollapseConfig, Failure> {
    let mut cfg = default_collapse_config(vec![1, 2, 3, 4, 5]);
    if let Some(p) = path {
        let file: CollapseFile = read_toml(p)?;
        expect_scenario(&file.scenario, "collapse-demo")?;
        if let Some(seeds) = file.seeds {
            cfg.seeds = seeds;
        }
        if let Some(run) = file.pretrain {
            cfg.pretrain = run;
        }
        if let Some(run) = file.naive {
            cfg.naive = run;
        }
        if let Some(run) = file.sverl {
            cfg.sverl = run;
        }
    }
    if let Some(seeds) = seeds_flag {
        cfg.seeds = seeds;
    }
    if cfg.seeds.is_empty() {
        return Err(Failure::config("collapse-demo needs at least one seed".into()));
    }
    for run in [&cfg.pretrain, &cfg.naive, &cfg.sverl] {
        run.validate().map_err(|e| Failure::config(e.to_string()))?;
    }
    Ok(cfg)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecklistVsHolisticFile {
    pub scenario: String,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub base: Option<RunConfig>,
    #[serde(default)]
    pub high_noise: Option<VerifierConfig>,
    #[serde(default)]
    pub near_oracle: Option<VerifierConfig>,
}

pub fn load_checklist_vs_holistic(
    path: Option<&Path>,
    seeds_flag: Option<Vec<u64>>,
) -> Result<ChecklistVsHolisticConfig, Failure> {
    let mut cfg = default_checklist_vs_holistic_config(vec![1, 2, 3, 4, 5]);
    if let Some(p) = path {
        let file: ChecklistVsHolisticFile = read_toml(p)?;
        expect_scenario(&file.scenario, "checklist-vs-holistic")?;
        if let Some(seeds) = file.seeds {
            cfg.seeds = seeds;
        }
        if let Some(base) = file.base {
            cfg.base = base;
        }
        if let Some(v) = file.high_noise {
            cfg.high_noise = v;
        }
        if let Some(v) = file.near_oracle {
            cfg.near_oracle = v;
        }
    }
    if let Some(seeds) = seeds_flag {
        cfg.seeds = seeds;
    }
    if cfg.seeds.is_empty() {
        return Err(Failure::config("checklist-vs-holistic needs at least one seed".into()));
    }
    cfg.base.validate().map_err(|e| Failure::config(e.to_string()))?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

fn default_cell_cap() -> usize {
    64
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub scenario: String,
    #[serde(default = "default_cell_cap")]
    pub cell_cap: usize,
    pub base: SweepBase,
    pub grid: BTreeMap<String, Vec<toml::Value>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBase {
    pub seeds: Vec<u64>,
    pub run: RunSpec,
    /// Optional warm-start phase, run once per seed and shared by every
    /// cell.
    #[serde(default)]
    pub pretrain: Option<RunSpec>,
}

/// One sweep cell: a resolved run config plus its override labels.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub index: usize,
    pub overrides: Vec<(String, f64)>,
    pub config: RunConfig,
}

/// Config keys a sweep may vary.
pub const SWEEPABLE_KEYS: [&str; 16] = [
    "trainer.steps",
    "trainer.group_size",
    "trainer.j_votes",
    "trainer.tau",
    "trainer.tau_plus",
    "trainer.tau_minus",
    "trainer.beta_pc",
    "trainer.lambda_v",
    "trainer.lambda_p",
    "trainer.learning_rate",
    "verifier.p",
    "verifier.q",
    "verifier.p_item",
    "verifier.q_item",
    "verifier.lenient_prob",
    "env.corruption.spurious_prob",
];

fn apply_override(config: &mut RunConfig, key: &str, value: f64) -> Result<(), Failure> {
    let as_usize = || value as usize;
    match key {
        "trainer.steps" => config.trainer.steps = as_usize(),
        "trainer.group_size" => config.trainer.group_size = as_usize(),
        "trainer.j_votes" => config.trainer.j_votes = as_usize(),
        "trainer.tau" => config.trainer.tau = value,
        "trainer.tau_plus" => config.trainer.tau_plus = value,
        "trainer.tau_minus" => config.trainer.tau_minus = value,
        "trainer.beta_pc" => config.trainer.beta_pc = value,
        "trainer.lambda_v" => config.trainer.lambda_v = value,
        "trainer.lambda_p" => config.trainer.lambda_p = value,
        "trainer.learning_rate" => config.trainer.learning_rate = value,
        "verifier.p" | "verifier.q" | "verifier.p_item" | "verifier.q_item"
        | "verifier.lenient_prob" => match &mut config.verifier {
            VerifierConfig::Noisy { params, lenient_prob } => match key {
                "verifier.p" => params.p = value,
                "verifier.q" => params.q = value,
                "verifier.p_item" => params.p_item = value,
                "verifier.q_item" => params.q_item = value,
                _ => *lenient_prob = value,
            },
            VerifierConfig::Oracle => {
                return Err(Failure::config(format!(
                    "{key} needs a noisy base verifier, the base is the oracle"
                )))
            }
        },
        "env.corruption.spurious_prob" => match &mut config.env.corruption {
            Some(plan) => plan.spurious_prob = value,
            None => {
                let mut plan = CorruptionPlan::identity(0);
                plan.spurious_prob = value;
                config.env.corruption = Some(plan);
            }
        },
        other => {
            return Err(Failure::config(format!(
                "grid key {other:?} is not sweepable; declared keys: {SWEEPABLE_KEYS:?}"
            )))
        }
    }
    Ok(())
}

fn numeric(value: &toml::Value, key: &str) -> Result<f64, Failure> {
    match value {
        toml::Value::Integer(i) => Ok(*i as f64),
        toml::Value::Float(f) => Ok(*f),
        other => Err(Failure::config(format!("grid value {other} for {key} is not numeric"))),
    }
}

pub struct Sweep {
    pub seeds: Vec<u64>,
    pub pretrain: Option<RunConfig>,
    pub cells: Vec<SweepCell>,
}

pub fn load_sweep(path: &Path) -> Result<Sweep, Failure> {
    let file: SweepFile = read_toml(path)?;
    expect_scenario(&file.scenario, "sweep")?;
    if file.base.seeds.is_empty() {
        return Err(Failure::config("sweep needs at least one seed".into()));
    }
    let pretrain = file.base.pretrain.as_ref().map(RunSpec::resolve).transpose()?;
    let base = file.base.run.resolve()?;
    let keys: Vec<&String> = file.grid.keys().collect();
    let mut axes: Vec<(String, Vec<f64>)> = Vec::new();
    for key in keys {
        let values = &file.grid[key];
        if values.is_empty() {
            return Err(Failure::config(format!("grid axis {key} is empty")));
        }
        let mut axis = Vec::new();
        for v in values {
            axis.push(numeric(v, key)?);
        }
        axes.push((key.clone(), axis));
    }
    let cell_count: usize = axes.iter().map(|(_, v)| v.len()).product::<usize>().max(1);
    if cell_count > file.cell_cap {
        return Err(Failure::config(format!(
            "grid spans {cell_count} cells, above the cap of {}",
            file.cell_cap
        )));
    }
    let mut cells = Vec::with_capacity(cell_count);
    for index in 0..cell_count {
        let mut config = base.clone();
        let mut overrides = Vec::new();
        let mut radix = index;
        for (key, axis) in &axes {
            let value = axis[radix % axis.len()];
            radix /= axis.len();
            apply_override(&mut config, key, value)?;
            overrides.push((key.clone(), value));
        }
        config.validate().map_err(|e| {
            Failure::config(format!("cell {index} ({overrides:?}) is invalid: {e}"))
        })?;
        cells.push(SweepCell { index, overrides, config });
    }
    Ok(Sweep { seeds: file.base.seeds, pretrain, cells })
}

// ---------------------------------------------------------------------------
// Output root
// ---------------------------------------------------------------------------

/// Output directory: `--out`, else `$SVERL_LAB_OUT/<scenario>`, else
/// `runs/<scenario>`.
pub fn out_root(flag: Option<PathBuf>, scenario: &str) -> PathBuf {
    if let Some(path) = flag {
        return path;
    }
    match std::env::var_os("SVERL_LAB_OUT") {
        Some(root) => PathBuf::from(root).join(scenario),
        None => PathBuf::from("runs").join(scenario),
    }
}
