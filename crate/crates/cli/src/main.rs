//! Scenario runner for the checklist soft-verification lab.
//!
//! Exit codes: 0 on success, 2 on configuration or I/O problems, 3 when a
//! scenario's assertions fail.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sverl_core::run::{self, RunError};
use sverl_core::scenarios;
use sverl_core::trainer::TrainerError;

#[derive(Debug)]
pub enum Failure {
    /// Bad config, unreadable files, unwritable output: exit 2.
    Config(String),
    /// A scenario check did not hold: exit 3.
    Assertion(String),
}

impl Failure {
    pub fn config(msg: String) -> Self {
        Failure::Config(msg)
    }

    pub fn assertion(msg: String) -> Self {
        Failure::Assertion(msg)
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Trainer(TrainerError::NonFinite { step }) => {
                Failure::Assertion(format!("non-finite training state at step {step}"))
            }
            RunError::Artifact(msg) => Failure::Assertion(msg),
            other => Failure::Config(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "sverl-lab",
    version,
    about = "Checklist soft-verification lab: estimator theory checks and self-verified RL scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form bias/variance/MSE checks against Monte Carlo, plus the
    /// pinned worked values; emits the phase-diagram CSV.
    Theory {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Two-term gradient identity on random finite Gibbs models.
    PartitionCheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// One training scenario from a config file, across its seed list.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run only this seed instead of the config's list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Paired demo: pretrain, then naive self-verification (always-yes
    /// collapse) vs the stabilized loop on the same seeds.
    CollapseDemo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Checklist vs holistic rewards under a noisy and a near-oracle
    /// external verifier.
    ChecklistVsHolistic {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Cartesian sweep over declared config keys, one summary row per
    /// cell.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify a run directory: recompute summaries from raw metrics and
    /// optionally re-execute every run from its manifest.
    Report {
        #[arg(long)]
        run: PathBuf,
        /// Re-execute from manifests and demand byte-identical metrics.
        #[arg(long)]
        reproduce: bool,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Assertion(msg)) => {
            eprintln!("assertion failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn ensure_dir(path: &PathBuf) -> Result<(), Failure> {
    std::fs::create_dir_all(path)
        .map_err(|e| Failure::config(format!("output {} not writable: {e}", path.display())))
}

fn write_out(path: PathBuf, contents: &str) -> Result<(), Failure> {
    std::fs::write(&path, contents)
        .map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Theory { config, out, seed } => {
            let mut file = config::load_theory(config.as_deref())?;
            if let Some(seed) = seed {
                file.seed = seed;
            }
            let out = config::out_root(out, "theory");
            ensure_dir(&out)?;
            let report = scenarios::theory_suite(
                file.points_var,
                file.points_mse,
                file.trials_var,
                file.trials_mse,
                file.seed,
            );
            let worked = scenarios::worked_point_checks();
            write_out(out.join("theory_points.csv"), &scenarios::theory_csv(&report))?;
            let summary = serde_json::json!({
                "points_var": file.points_var,
                "points_mse": file.points_mse,
                "grid_failures": report.failures,
                "worked_point_failures": worked,
                "ok": report.ok() && worked.is_empty(),
            });
            write_out(out.join("summary.json"), &format!("{summary:#}\n"))?;
            println!(
                "theory: {} grid points checked, {} grid failures, {} worked-point failures",
                report.rows.len(),
                report.failures.len(),
                worked.len()
            );
            println!("wrote {}", out.join("theory_points.csv").display());
            if !report.ok() || !worked.is_empty() {
                let first = report.failures.first().or(worked.first()).unwrap().clone();
                return Err(Failure::assertion(first));
            }
            Ok(())
        }
        Command::PartitionCheck { config, out, seed } => {
            let mut file = config::load_partition(config.as_deref())?;
            if let Some(seed) = seed {
                file.seed = seed;
            }
            let out = config::out_root(out, "partition-check");
            ensure_dir(&out)?;
            let report = scenarios::partition_suite(file.models, file.seed);
            write_out(out.join("partition_checks.csv"), &scenarios::partition_csv(&report))?;
            println!(
                "partition-check: {} models, worst deviation {:.3e}",
                report.reports.len(),
                report.worst()
            );
            if !report.ok() {
                return Err(Failure::assertion(format!(
                    "two-term gradient deviates by {:.3e}, above {:.0e}",
                    report.worst(),
                    sverl_core::gibbs::PARTITION_CHECK_TOL
                )));
            }
            Ok(())
        }
        Command::Train { config, out, seed } => {
            let (mut seeds, run_config) = config::load_train(&config)?;
            if let Some(seed) = seed {
                seeds = vec![seed];
            }
            let out = config::out_root(out, "train");
            ensure_dir(&out)?;
            let mut summary_rows = Vec::new();
            for &seed in &seeds {
                let name = format!("seed-{seed}");
                let outcome = run::write_run(&out.join(&name), "train", &run_config, seed, None)?;
                let summary = run::summarize(&outcome.metrics);
                let trailing = summary
                    .iter()
                    .find(|(m, _)| m == "trailing_oracle_strict")
                    .map(|(_, v)| *v)
                    .unwrap_or(f64::NAN);
                println!("{name}: trailing oracle strict {trailing:.3}");
                summary_rows.push((name, summary));
            }
            write_out(out.join(run::SUMMARY_FILE), &run::summary_csv(&summary_rows))?;
            println!("wrote {}", out.join(run::SUMMARY_FILE).display());
            Ok(())
        }
        Command::CollapseDemo { config, out, seeds } => {
            let cfg = config::load_collapse(config.as_deref(), seeds)?;
            let out = config::out_root(out, "collapse-demo");
            ensure_dir(&out)?;
            let report = scenarios::collapse_demo(&cfg, Some(&out))?;
            let n = report.outcomes.len();
            for o in &report.outcomes {
                println!(
                    "seed {}: naive reward {:.3}->{:.3}, strict {:.3}->{:.3} | stabilized strict {:.3}, yes-rate {:.4} vs {:.4}",
                    o.seed,
                    o.naive.step0_reward,
                    o.naive.trailing_reward,
                    o.naive.leading_strict,
                    o.naive.trailing_strict,
                    o.sverl.trailing_strict,
                    o.sverl.postwarmup_yes_failing.unwrap_or(f64::NAN),
                    o.naive.postwarmup_yes_failing.unwrap_or(f64::NAN),
                );
            }
            println!(
                "collapse-demo: collapsed {}/{n}, stabilized {}/{n}, yes-rate lower {}/{n}",
                report.collapsed_seeds, report.stabilized_seeds, report.yes_rate_lower_seeds
            );
            println!("wrote {}", out.join("verdicts.json").display());
            if !report.ok() {
                return Err(Failure::assertion(format!(
                    "paired directions not met: collapsed {}/{n}, stabilized {}/{n}, yes-rate lower {}/{n}",
                    report.collapsed_seeds, report.stabilized_seeds, report.yes_rate_lower_seeds
                )));
            }
            Ok(())
        }
        Command::ChecklistVsHolistic { config, out, seeds } => {
            let cfg = config::load_checklist_vs_holistic(config.as_deref(), seeds)?;
            let out = config::out_root(out, "checklist-vs-holistic");
            ensure_dir(&out)?;
            let report = scenarios::checklist_vs_holistic(&cfg, Some(&out))?;
            for o in &report.outcomes {
                println!(
                    "seed {}: noisy verifier checklist {:.3} vs holistic {:.3}; near-oracle {:.3} vs {:.3}",
                    o.seed,
                    o.checklist_high_noise,
                    o.holistic_high_noise,
                    o.checklist_near_oracle,
                    o.holistic_near_oracle
                );
            }
            println!(
                "checklist-vs-holistic: checklist wins {}/{} under noise; gap {:.3} noisy vs {:.3} near-oracle",
                report.checklist_wins_high_noise,
                report.outcomes.len(),
                report.gap_high_noise,
                report.gap_near_oracle
            );
            if !report.ok() {
                return Err(Failure::assertion(
                    "checklist advantage under noise did not hold or did not shrink near the oracle"
                        .into(),
                ));
            }
            Ok(())
        }
        Command::Sweep { config, out } => {
            let sweep = config::load_sweep(&config)?;
            let out = config::out_root(out, "sweep");
            ensure_dir(&out)?;
            let mut summary_rows = Vec::new();
            println!("sweep: {} cells x {} seeds", sweep.cells.len(), sweep.seeds.len());
            // Shared warm-start phase, one run per seed.
            let mut starts = std::collections::BTreeMap::new();
            if let Some(pretrain) = &sweep.pretrain {
                for &seed in &sweep.seeds {
                    let name = format!("pretrain-seed-{seed}");
                    let outcome =
                        run::write_run(&out.join(&name), "pretrain", pretrain, seed, None)?;
                    summary_rows.push((name, run::summarize(&outcome.metrics)));
                    starts.insert(seed, outcome.final_params.to_checkpoint());
                }
            }
            for cell in &sweep.cells {
                let cell_name = format!("cell-{:03}", cell.index);
                let cell_dir = out.join(&cell_name);
                ensure_dir(&cell_dir)?;
                write_out(
                    cell_dir.join("overrides.json"),
                    &format!(
                        "{:#}\n",
                        serde_json::json!(cell
                            .overrides
                            .iter()
                            .map(|(k, v)| (k.clone(), *v))
                            .collect::<std::collections::BTreeMap<_, _>>())
                    ),
                )?;
                let aggregated = ["trailing_oracle_strict", "trailing_mean_reward", "postwarmup_yes_rate_failing"];
                let mut sums: Vec<Vec<f64>> = vec![Vec::new(); aggregated.len()];
                for &seed in &sweep.seeds {
                    let run_name = format!("{cell_name}/seed-{seed}");
                    let outcome = run::write_run(
                        &cell_dir.join(format!("seed-{seed}")),
                        "sweep",
                        &cell.config,
                        seed,
                        starts.get(&seed),
                    )?;
                    let summary = run::summarize(&outcome.metrics);
                    for (slot, metric) in aggregated.iter().enumerate() {
                        if let Some((_, v)) = summary.iter().find(|(m, _)| m == metric) {
                            sums[slot].push(*v);
                        }
                    }
                    summary_rows.push((run_name, summary));
                }
                let mut cell_rows = Vec::new();
                for (slot, metric) in aggregated.iter().enumerate() {
                    if !sums[slot].is_empty() {
                        let mean = sums[slot].iter().sum::<f64>() / sums[slot].len() as f64;
                        cell_rows.push((format!("mean_{metric}"), mean));
                    }
                }
                let shown: Vec<String> =
                    cell_rows.iter().map(|(m, v)| format!("{m} {v:.3}")).collect();
                println!("{cell_name} {:?}: {}", cell.overrides, shown.join(", "));
                summary_rows.push((cell_name, cell_rows));
            }
            write_out(out.join(run::SUMMARY_FILE), &run::summary_csv(&summary_rows))?;
            println!("wrote {}", out.join(run::SUMMARY_FILE).display());
            Ok(())
        }
        Command::Report { run: dir, reproduce } => {
            if !dir.exists() {
                return Err(Failure::config(format!("{} does not exist", dir.display())));
            }
            let single_run = dir.join(run::MANIFEST_FILE).exists();
            if dir.join(run::SUMMARY_FILE).exists() {
                let checked = run::verify_summary(&dir)?;
                println!("summary: {checked} rows match the raw metrics");
            } else if !single_run {
                println!("no summary.csv at {}; checking run dirs only", dir.display());
            }
            if reproduce {
                let runs = if single_run {
                    vec![dir.clone()]
                } else {
                    collect_runs(&dir)?
                };
                if runs.is_empty() {
                    return Err(Failure::config(format!(
                        "no run manifests under {}",
                        dir.display()
                    )));
                }
                for run_dir in &runs {
                    run::reproduce(run_dir)?;
                    println!("reproduced byte-identical metrics: {}", run_dir.display());
                }
            }
            Ok(())
        }
    }
}

/// Run directories at depth one or two (sweeps nest them per cell).
fn collect_runs(dir: &PathBuf) -> Result<Vec<PathBuf>, Failure> {
    let mut runs = run::run_dirs(dir).map_err(Failure::from)?;
    let listing = std::fs::read_dir(dir)
        .map_err(|e| Failure::config(format!("cannot list {}: {e}", dir.display())))?;
    for entry in listing.flatten() {
        let path = entry.path();
        if path.is_dir() && !path.join(run::MANIFEST_FILE).exists() {
            runs.extend(run::run_dirs(&path).map_err(Failure::from)?);
        }
    }
    runs.sort();
    Ok(runs)
}
