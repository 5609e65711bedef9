//! Scenario harnesses: the preset experiments behind the CLI subcommands
//! and the acceptance suite.
//!
//! Outcome measurements use leading/trailing five-step means rather than
//! single steps: a step scores only a couple dozen candidates, so endpoint
//! rates carry visible sampling noise.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checklist::derive_checklist;
use crate::constraint::sample_spec;
use crate::gibbs::{self, PartitionCheckReport};
use crate::oracle;
use crate::policy::{Checkpoint, PromptFeatures};
use crate::presets;
use crate::response::SlotAssignment;
use crate::reward::{soft_score, RewardMode};
use crate::run::{self, RunError};
use crate::theory::{
    self, analytic_bias, analytic_variance, mse, random_grid, improvement_condition, Branch,
};
use crate::trainer::{EnvConfig, RunConfig, TrainMode, TrainerConfig, VerifierConfig};
use crate::verifier::{aggregate, pass_rates, sample_item_votes, CorrelationModel, NoiseParams, Verifier, VerifierContext, VoteKey};

// ---------------------------------------------------------------------------
// Theory suite
// ---------------------------------------------------------------------------

/// One grid point with closed forms, Monte Carlo counterparts, and check
/// verdicts.
#[derive(Debug, Clone, Serialize)]
pub struct TheoryRow {
    pub index: usize,
    pub p: f64,
    pub q: f64,
    pub p_item: f64,
    pub q_item: f64,
    pub alpha: f64,
    pub alpha_item: f64,
    pub k: usize,
    pub s_star: bool,
    pub delta_star: f64,
    pub bias_single: f64,
    pub bias_chk: f64,
    pub var_single: f64,
    pub var_chk: f64,
    pub var_bound: f64,
    pub var_within_bound: bool,
    pub mse_single: f64,
    pub mse_chk: f64,
    pub mc_mean_jbar: f64,
    pub mc_var_jbar: f64,
    pub mc_mean_j: f64,
    pub mc_var_j: f64,
    pub moments_within_4sigma: bool,
    pub condition_branch: Branch,
    pub condition_holds: bool,
    pub condition_margin: f64,
    /// Monte Carlo MSE ordering check; `None` where the condition fails
    /// (the condition is sufficient, not necessary).
    pub mse_order_ok: Option<bool>,
    pub mc_mse_single: Option<f64>,
    pub mc_mse_chk: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheorySuiteReport {
    pub rows: Vec<TheoryRow>,
    pub failures: Vec<String>,
}

impl TheorySuiteReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Run the moment checks on `n_var` grid points (trials `trials_var`) and
/// the MSE-ordering checks on `n_mse` points (trials `trials_mse`).
pub fn theory_suite(
    n_var: usize,
    n_mse: usize,
    trials_var: u64,
    trials_mse: u64,
    seed: u64,
) -> TheorySuiteReport {
    let independence = CorrelationModel::default();
    let mut rows = Vec::new();
    let mut failures = Vec::new();

    let var_grid = random_grid(n_var, seed);
    let mse_grid = random_grid(n_mse, seed ^ 0x5eed_cafe);

    for (index, point) in var_grid.iter().chain(mse_grid.iter()).enumerate() {
        let on_var_grid = index < var_grid.len();
        let bias = analytic_bias(point);
        let var = analytic_variance(point, &independence).expect("independence grid");
        let mse_report = mse(point, &independence).expect("independence grid");
        let verdict = improvement_condition(point);

        let mut row = TheoryRow {
            index,
            p: point.params.p,
            q: point.params.q,
            p_item: point.params.p_item,
            q_item: point.params.q_item,
            alpha: point.params.alpha(),
            alpha_item: point.params.alpha_item(),
            k: point.k,
            s_star: point.s_star,
            delta_star: point.delta_star(),
            bias_single: bias.single,
            bias_chk: bias.checklist,
            var_single: var.single,
            var_chk: var.checklist,
            var_bound: var.bound,
            var_within_bound: var.within_bound,
            mse_single: mse_report.single,
            mse_chk: mse_report.checklist,
            mc_mean_jbar: f64::NAN,
            mc_var_jbar: f64::NAN,
            mc_mean_j: f64::NAN,
            mc_var_j: f64::NAN,
            moments_within_4sigma: true,
            condition_branch: verdict.branch,
            condition_holds: verdict.holds,
            condition_margin: verdict.margin,
            mse_order_ok: None,
            mc_mse_single: None,
            mc_mse_chk: None,
        };

        if !var.within_bound {
            failures.push(format!("point {index}: variance exceeds 1/(4K)"));
        }

        if on_var_grid {
            let mc = theory::mc_jbar_moments(point, &independence, trials_var, seed ^ index as u64);
            let mh = theory::mc_holistic_moments(point, trials_var, seed ^ (index as u64) << 1);
            row.mc_mean_jbar = mc.mean;
            row.mc_var_jbar = mc.var;
            row.mc_mean_j = mh.mean;
            row.mc_var_j = mh.var;
            // Bias coefficients are means shifted by the target, so the
            // mean checks cover them.
            let mean_jbar_expected = point.mu_bar();
            let mean_j_expected = point.mu_single();
            let checks = [
                (mc.mean, mean_jbar_expected, 4.0 * mc.se_mean.max(1e-9), "mean(Jbar)"),
                (mc.var, var.checklist, 4.0 * mc.se_var.max(1e-9), "var(Jbar)"),
                (mh.mean, mean_j_expected, 4.0 * mh.se_mean.max(1e-9), "mean(J)"),
                (mh.var, var.single, 4.0 * mh.se_var.max(1e-9), "var(J)"),
            ];
            for (got, want, tol, what) in checks {
                if (got - want).abs() > tol {
                    row.moments_within_4sigma = false;
                    failures.push(format!(
                        "point {index}: {what} off closed form: {got} vs {want} (tol {tol})"
                    ));
                }
            }
        } else if verdict.holds {
            let mc = theory::mc_mse_pair(point, &independence, trials_mse, seed ^ (index as u64) << 2);
            row.mc_mse_single = Some(mc.mse_single);
            row.mc_mse_chk = Some(mc.mse_checklist);
            let ok = mc.mse_checklist <= mc.mse_single + 4.0 * mc.se_diff.max(1e-9);
            row.mse_order_ok = Some(ok);
            if !ok {
                failures.push(format!(
                    "point {index}: condition holds but MC MSE ordering failed ({} vs {})",
                    mc.mse_checklist, mc.mse_single
                ));
            }
        }
        rows.push(row);
    }

    TheorySuiteReport { rows, failures }
}

/// CSV rendering of the theory rows (the phase-diagram table).
pub fn theory_csv(report: &TheorySuiteReport) -> String {
    let mut out = String::from(
        "index,p,q,p_item,q_item,alpha,alpha_item,k,s_star,delta_star,\
         bias_single,bias_chk,var_single,var_chk,var_bound,var_within_bound,\
         mse_single,mse_chk,mc_mean_jbar,mc_var_jbar,mc_mean_j,mc_var_j,\
         moments_within_4sigma,condition_branch,condition_holds,condition_margin,mse_order_ok,\
         mc_mse_single,mc_mse_chk\n",
    );
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let optb = |v: Option<bool>| v.map_or(String::new(), |x| x.to_string());
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:?},{},{},{},{},{}\n",
            r.index, r.p, r.q, r.p_item, r.q_item, r.alpha, r.alpha_item, r.k, r.s_star,
            r.delta_star, r.bias_single, r.bias_chk, r.var_single, r.var_chk, r.var_bound,
            r.var_within_bound, r.mse_single, r.mse_chk, r.mc_mean_jbar, r.mc_var_jbar,
            r.mc_mean_j, r.mc_var_j, r.moments_within_4sigma, r.condition_branch, r.condition_holds,
            r.condition_margin, optb(r.mse_order_ok), opt(r.mc_mse_single), opt(r.mc_mse_chk),
        ));
    }
    out
}

/// Pinned worked values of the closed forms: bias, variance, MSE identity,
/// condition margins, size thresholds, and the crossing scans. Returns the
/// list of violations (empty when everything matches).
pub fn worked_point_checks() -> Vec<String> {
    let mut failures = Vec::new();
    fn check(failures: &mut Vec<String>, name: &str, got: f64, want: f64, tol: f64) {
        if (got - want).abs() > tol {
            failures.push(format!("{name}: got {got}, pinned {want}"));
        }
    }
    let independence = CorrelationModel::default();
    let params = NoiseParams::new(0.9, 0.7, 0.9, 0.8);

    let gap_half = theory::TheoryPoint::new(params, 4, false, 2).unwrap();
    check(&mut failures, "bias_chk at gap 1/2", analytic_bias(&gap_half).checklist, 0.55, 1e-12);
    check(
        &mut failures,
        "mse_single identity 1-q",
        mse(&gap_half, &independence).unwrap().single,
        0.3,
        1e-12,
    );

    let explicit = theory::TheoryPoint::with_y(params, vec![true, true, false, false]).unwrap();
    let var = analytic_variance(&explicit, &independence).unwrap();
    check(&mut failures, "var_chk worked value", var.checklist, 0.03125, 1e-12);
    check(&mut failures, "variance bound at K=4", var.bound, 0.0625, 1e-15);
    if !var.within_bound {
        failures.push("worked variance point exceeds its bound".into());
    }

    let quarter = theory::TheoryPoint::new(params, 4, false, 1).unwrap();
    let verdict = improvement_condition(&quarter);
    check(&mut failures, "condition margin at gap 1/4", verdict.margin, 0.096875, 1e-12);
    if !verdict.holds {
        failures.push("condition should hold at gap 1/4".into());
    }
    let verdict = improvement_condition(&gap_half);
    check(&mut failures, "condition margin at gap 1/2", verdict.margin, -0.065, 1e-12);
    if verdict.holds {
        failures.push("condition should fail at gap 1/2".into());
    }

    let correct = theory::TheoryPoint::new(NoiseParams::new(0.95, 0.7, 0.9, 0.8), 4, true, 4).unwrap();
    let thresholds = theory::k_thresholds(&correct);
    if thresholds.threshold_correct != Some(3) {
        failures.push(format!(
            "correct-branch threshold: got {:?}, pinned 3",
            thresholds.threshold_correct
        ));
    }
    if thresholds.a_implies_b_threshold != Some(2) {
        failures.push(format!(
            "bias-implies-mse threshold: got {:?}, pinned 2",
            thresholds.a_implies_b_threshold
        ));
    }
    let single = mse(&correct, &independence).unwrap().single;
    for (k, expect_better) in [(1usize, false), (2, false), (3, true), (4, true), (5, true)] {
        let better = theory::mse_checklist_at_k(&correct, k) <= single;
        if better != expect_better {
            failures.push(format!("MSE crossing scan wrong at K = {k}"));
        }
    }

    let hopeless = theory::TheoryPoint::new(NoiseParams::new(0.99, 0.7, 0.5, 0.8), 4, true, 4).unwrap();
    if !theory::k_thresholds(&hopeless).impossible {
        failures.push("bias-necessary point should be flagged impossible".into());
    }
    let single = mse(&hopeless, &independence).unwrap().single;
    for k in [1usize, 2, 8, 64, 512, 10_000] {
        if theory::mse_checklist_at_k(&hopeless, k) <= single {
            failures.push(format!("impossible point crossed at K = {k}"));
        }
    }
    failures
}

// ---------------------------------------------------------------------------
// Partition-identity suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct PartitionSuiteReport {
    pub reports: Vec<PartitionCheckReport>,
}

impl PartitionSuiteReport {
    pub fn ok(&self) -> bool {
        self.reports.iter().all(|r| r.ok)
    }

    pub fn worst(&self) -> f64 {
        self.reports.iter().map(|r| r.max_abs_diff).fold(0.0, f64::max)
    }
}

/// Check the two-term gradient identity on `n` random toy models.
pub fn partition_suite(n: usize, seed: u64) -> PartitionSuiteReport {
    let reports = (0..n)
        .map(|i| {
            let (model, phi, d_plus) = gibbs::random_instance(seed ^ i as u64);
            gibbs::partition_gradient_check(&model, &phi, &d_plus)
                .expect("random instances are enumerable")
        })
        .collect();
    PartitionSuiteReport { reports }
}

pub fn partition_csv(report: &PartitionSuiteReport) -> String {
    let mut out = String::from("model,responses,items,kl_temperature,max_abs_diff,ok\n");
    for (i, r) in report.reports.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{},{}\n",
            r.responses, r.items, r.kl_temperature, r.max_abs_diff, r.ok
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Oracle equivalence
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleEquivalenceReport {
    pub specs: usize,
    pub responses_checked: u64,
    pub mismatches: u64,
}

/// Brute-force check over full response grids: with the oracle verifier
/// and a faithful checklist, the soft score equals the partial-credit
/// target and the strict bit equals strict success, on every response.
pub fn oracle_equivalence(n_specs: usize, j_votes: usize, tau: f64, seed: u64) -> OracleEquivalenceReport {
    let family = presets::mixed_family();
    let mut responses_checked = 0u64;
    let mut mismatches = 0u64;
    for s in 0..n_specs {
        let spec = sample_spec(&family, crate::rng::derive(seed, &[77, s as u64])).expect("satisfiable family");
        let prompt = PromptFeatures::of(&spec);
        let checklist = derive_checklist(&spec);
        for (i, slots) in SlotAssignment::enumerate_all().enumerate() {
            let text = slots.render();
            let truth = oracle::ground_truth(&spec, &checklist, &text).expect("faithful checklist");
            let stats = oracle::stats_of(&truth).expect("faithful checklists define all bits");
            let ctx = VerifierContext {
                spec: &spec,
                prompt: &prompt,
                slots,
                checklist: &checklist,
                truth: &truth,
            };
            let probs = Verifier::Oracle.item_yes_probs(&ctx);
            let row = sample_item_votes(
                &probs,
                0.0,
                j_votes,
                VoteKey { seed, path: [s as u64, i as u64, 0] },
            );
            let labels = aggregate(&pass_rates(&row), tau);
            let s_soft = soft_score(&labels);
            let strict = labels.iter().all(|&l| l);
            responses_checked += 1;
            if s_soft != stats.partial || strict != stats.strict {
                mismatches += 1;
            }
        }
    }
    OracleEquivalenceReport { specs: n_specs, responses_checked, mismatches }
}

// ---------------------------------------------------------------------------
// Collapse demo and stabilization
// ---------------------------------------------------------------------------

/// Paired self-verification experiment: shared pretrained start, then a
/// naive shared-parameter phase and a stabilized phase on the same seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollapseConfig {
    pub pretrain: RunConfig,
    pub naive: RunConfig,
    pub sverl: RunConfig,
    pub seeds: Vec<u64>,
}

/// Phase endpoints. Leading/trailing values are five-step means.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PhaseSummary {
    pub step0_reward: f64,
    pub trailing_reward: f64,
    pub step0_strict: f64,
    pub leading_strict: f64,
    pub trailing_strict: f64,
    pub postwarmup_yes_failing: Option<f64>,
}

fn phase_summary(metrics: &[crate::trainer::StepMetrics]) -> PhaseSummary {
    let rows: std::collections::BTreeMap<String, f64> =
        run::summarize(metrics).into_iter().collect();
    PhaseSummary {
        step0_reward: rows["step0_mean_reward"],
        trailing_reward: rows["trailing_mean_reward"],
        step0_strict: rows["step0_oracle_strict"],
        leading_strict: rows["leading_oracle_strict"],
        trailing_strict: rows["trailing_oracle_strict"],
        postwarmup_yes_failing: rows.get("postwarmup_yes_rate_failing").copied(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PairedOutcome {
    pub seed: u64,
    pub pretrain_strict: f64,
    pub naive: PhaseSummary,
    pub sverl: PhaseSummary,
    /// Reward rose while oracle strict success fell in the naive phase.
    pub collapsed: bool,
    /// The stabilized phase ended at or above the naive phase's strict
    /// success.
    pub stabilized: bool,
    /// Post-warmup yes-rate on failing items was strictly lower with the
    /// stabilizers on.
    pub yes_rate_lower: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CollapseReport {
    pub outcomes: Vec<PairedOutcome>,
    pub collapsed_seeds: usize,
    pub stabilized_seeds: usize,
    pub yes_rate_lower_seeds: usize,
}

impl CollapseReport {
    /// Four-of-five style pass rule for both directions.
    pub fn ok(&self) -> bool {
        let need = required_majority(self.outcomes.len());
        self.collapsed_seeds >= need
            && self.stabilized_seeds >= need
            && self.yes_rate_lower_seeds >= need
    }
}

/// Pass quorum: all but one seed.
pub fn required_majority(total: usize) -> usize {
    total.saturating_sub(1).max(1)
}

/// Run the paired demo. With `out_dir` set, every phase run writes full
/// artifacts and a scenario summary lands at the root.
pub fn collapse_demo(cfg: &CollapseConfig, out_dir: Option<&Path>) -> Result<CollapseReport, RunError> {
    let mut outcomes = Vec::new();
    let mut summary_rows: Vec<(String, Vec<(String, f64)>)> = Vec::new();
    for &seed in &cfg.seeds {
        let mut phase = |name: &str, config: &RunConfig, init: Option<&Checkpoint>| {
            let run_name = format!("{name}-seed-{seed}");
            let outcome = match out_dir {
                Some(root) => run::write_run(&root.join(&run_name), name, config, seed, init)?,
                None => run::execute(config, seed, init)?,
            };
            summary_rows.push((run_name, run::summarize(&outcome.metrics)));
            Ok::<_, RunError>(outcome)
        };
        let pretrain = phase("pretrain", &cfg.pretrain, None)?;
        let start = pretrain.final_params.to_checkpoint();
        let naive_run = phase("naive", &cfg.naive, Some(&start))?;
        let sverl_run = phase("sverl", &cfg.sverl, Some(&start))?;

        let naive = phase_summary(&naive_run.metrics);
        let sverl = phase_summary(&sverl_run.metrics);
        let collapsed = naive.trailing_reward > naive.step0_reward
            && naive.trailing_strict < naive.leading_strict;
        let stabilized = sverl.trailing_strict >= naive.trailing_strict;
        let yes_rate_lower = match (sverl.postwarmup_yes_failing, naive.postwarmup_yes_failing) {
            (Some(s), Some(n)) => s < n,
            _ => false,
        };
        outcomes.push(PairedOutcome {
            seed,
            pretrain_strict: phase_summary(&pretrain.metrics).trailing_strict,
            naive,
            sverl,
            collapsed,
            stabilized,
            yes_rate_lower,
        });
    }
    let report = CollapseReport {
        collapsed_seeds: outcomes.iter().filter(|o| o.collapsed).count(),
        stabilized_seeds: outcomes.iter().filter(|o| o.stabilized).count(),
        yes_rate_lower_seeds: outcomes.iter().filter(|o| o.yes_rate_lower).count(),
        outcomes,
    };
    if let Some(root) = out_dir {
        std::fs::create_dir_all(root)?;
        std::fs::write(root.join(run::SUMMARY_FILE), run::summary_csv(&summary_rows))?;
        std::fs::write(root.join("verdicts.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

/// Pilot-tuned defaults for the paired self-verification demo.
pub fn default_collapse_config(seeds: Vec<u64>) -> CollapseConfig {
    let family = presets::demo_family();
    let pretrain = RunConfig {
        trainer: TrainerConfig {
            mode: TrainMode::External,
            steps: 150,
            group_size: 8,
            j_votes: 1,
            prompts_per_step: 4,
            tau: 1.0,
            learning_rate: 0.3,
            ..TrainerConfig::default()
        },
        env: EnvConfig { family: family.clone(), corruption: None },
        verifier: VerifierConfig::Oracle,
    };
    let naive = RunConfig {
        trainer: TrainerConfig {
            mode: TrainMode::NaiveSelf,
            steps: 700,
            group_size: 8,
            j_votes: 3,
            prompts_per_step: 2,
            tau: 0.75,
            learning_rate: 0.35,
            lambda_v: 0.0,
            lambda_p: 0.0,
            ..TrainerConfig::default()
        },
        env: EnvConfig { family: family.clone(), corruption: None },
        verifier: VerifierConfig::Oracle,
    };
    let sverl = RunConfig {
        trainer: TrainerConfig {
            mode: TrainMode::Sverl,
            lambda_v: 1.0,
            lambda_p: 1.0,
            gold_samples: 256,
            cotrain_batch: 32,
            cotrain_traces: 8,
            ..naive.trainer
        },
        env: EnvConfig { family, corruption: None },
        verifier: VerifierConfig::Oracle,
    };
    CollapseConfig { pretrain, naive, sverl, seeds }
}

// ---------------------------------------------------------------------------
// Checklist vs holistic rewards
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecklistVsHolisticConfig {
    /// Template run; the scenario overrides `reward_mode` and the verifier.
    pub base: RunConfig,
    pub high_noise: VerifierConfig,
    pub near_oracle: VerifierConfig,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ChecklistVsHolisticOutcome {
    pub seed: u64,
    pub checklist_high_noise: f64,
    pub holistic_high_noise: f64,
    pub checklist_near_oracle: f64,
    pub holistic_near_oracle: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChecklistVsHolisticReport {
    pub outcomes: Vec<ChecklistVsHolisticOutcome>,
    /// Seeds where checklist beat holistic under the noisy verifier.
    pub checklist_wins_high_noise: usize,
    /// Mean strict-success gap (checklist minus holistic) per verifier.
    pub gap_high_noise: f64,
    pub gap_near_oracle: f64,
}

impl ChecklistVsHolisticReport {
    pub fn ok(&self) -> bool {
        self.checklist_wins_high_noise >= required_majority(self.outcomes.len())
            && self.gap_near_oracle < self.gap_high_noise
    }
}

pub fn checklist_vs_holistic(
    cfg: &ChecklistVsHolisticConfig,
    out_dir: Option<&Path>,
) -> Result<ChecklistVsHolisticReport, RunError> {
    let mut outcomes = Vec::new();
    let mut summary_rows: Vec<(String, Vec<(String, f64)>)> = Vec::new();
    let arms = [
        ("checklist-high", RewardMode::Soft, true),
        ("holistic-high", RewardMode::Holistic, true),
        ("checklist-oracleish", RewardMode::Soft, false),
        ("holistic-oracleish", RewardMode::Holistic, false),
    ];
    for &seed in &cfg.seeds {
        let mut finals = [0.0f64; 4];
        for (slot, (name, mode, noisy)) in arms.iter().enumerate() {
            let mut config = cfg.base.clone();
            config.trainer.reward_mode = *mode;
            config.verifier = if *noisy { cfg.high_noise } else { cfg.near_oracle };
            let run_name = format!("{name}-seed-{seed}");
            let outcome = match out_dir {
                Some(root) => run::write_run(&root.join(&run_name), name, &config, seed, None)?,
                None => run::execute(&config, seed, None)?,
            };
            let summary = run::summarize(&outcome.metrics);
            finals[slot] = summary
                .iter()
                .find(|(m, _)| m == "trailing_oracle_strict")
                .expect("summary carries the trailing strict rate")
                .1;
            summary_rows.push((run_name, summary));
        }
        outcomes.push(ChecklistVsHolisticOutcome {
            seed,
            checklist_high_noise: finals[0],
            holistic_high_noise: finals[1],
            checklist_near_oracle: finals[2],
            holistic_near_oracle: finals[3],
        });
    }
    let n = outcomes.len() as f64;
    let report = ChecklistVsHolisticReport {
        checklist_wins_high_noise: outcomes
            .iter()
            .filter(|o| o.checklist_high_noise > o.holistic_high_noise)
            .count(),
        gap_high_noise: outcomes
            .iter()
            .map(|o| o.checklist_high_noise - o.holistic_high_noise)
            .sum::<f64>()
            / n,
        gap_near_oracle: outcomes
            .iter()
            .map(|o| o.checklist_near_oracle - o.holistic_near_oracle)
            .sum::<f64>()
            / n,
        outcomes,
    };
    if let Some(root) = out_dir {
        std::fs::create_dir_all(root)?;
        std::fs::write(root.join(run::SUMMARY_FILE), run::summary_csv(&summary_rows))?;
        std::fs::write(root.join("verdicts.json"), serde_json::to_string_pretty(&report)?)?;
        std::fs::write(root.join("verifier_rates.csv"), measured_rates_csv(cfg)?)?;
    }
    Ok(report)
}

/// Measure the configured verifiers' empirical `(p, q, p', q')` on a
/// synthetic eval set of uniform responses with oracle labels, the
/// desk-scale analogue of estimating verifier quality on initial-policy
/// completions.
fn measured_rates_csv(cfg: &ChecklistVsHolisticConfig) -> Result<String, RunError> {
    let mut out = String::from("verifier,p,q,p_item,q_item,alpha,alpha_item,n_pos,n_neg\n");
    let mut specs = Vec::new();
    for s in 0..24u64 {
        let seed = crate::rng::derive(991, &[s]);
        specs.push(sample_spec(&cfg.base.env.family, seed).expect("satisfiable family"));
    }
    let prepared: Vec<_> = specs
        .iter()
        .map(|spec| (spec, PromptFeatures::of(spec), derive_checklist(spec)))
        .collect();
    let mut cases = Vec::new();
    for (spec, prompt, checklist) in &prepared {
        for (i, slots) in SlotAssignment::enumerate_all().enumerate() {
            if i % 13 == 0 {
                cases.push(crate::verifier::EvalCase { spec, prompt, slots, checklist });
            }
        }
    }
    for (label, config) in [("high_noise", &cfg.high_noise), ("near_oracle", &cfg.near_oracle)] {
        let verifier = match *config {
            VerifierConfig::Oracle => Verifier::Oracle,
            VerifierConfig::Noisy { params, lenient_prob } => Verifier::Noisy {
                params,
                correlation: CorrelationModel { lenient_prob },
            },
        };
        let est = crate::verifier::empirical_rates(&verifier, &cases, 4, 992)
            .map_err(|e| RunError::Artifact(e.to_string()))?;
        let p = est.params;
        out.push_str(&format!(
            "{label},{},{},{},{},{},{},{},{}\n",
            p.p,
            p.q,
            p.p_item,
            p.q_item,
            p.alpha(),
            p.alpha_item(),
            est.n_pos,
            est.n_neg
        ));
    }
    Ok(out)
}

/// Pilot-tuned defaults: item-level judgments stay informative while the
/// holistic judgment degrades, mirroring measured verifier asymmetries.
pub fn default_checklist_vs_holistic_config(seeds: Vec<u64>) -> ChecklistVsHolisticConfig {
    let base = RunConfig {
        trainer: TrainerConfig {
            mode: TrainMode::External,
            steps: 200,
            group_size: 8,
            j_votes: 1,
            prompts_per_step: 2,
            tau: 1.0,
            learning_rate: 0.3,
            ..TrainerConfig::default()
        },
        env: EnvConfig { family: presets::training_family(), corruption: None },
        verifier: VerifierConfig::Oracle,
    };
    ChecklistVsHolisticConfig {
        base,
        high_noise: VerifierConfig::Noisy {
            params: NoiseParams::new(0.477, 0.662, 0.873, 0.717),
            lenient_prob: 0.0,
        },
        near_oracle: VerifierConfig::Noisy {
            params: NoiseParams::new(0.97, 0.97, 0.97, 0.97),
            lenient_prob: 0.0,
        },
        seeds,
    }
}

/// Reference external-oracle training run, the regression bound for the
/// plain RL loop: strict success must end high.
pub fn default_oracle_reference_config() -> RunConfig {
    RunConfig {
        trainer: TrainerConfig {
            mode: TrainMode::External,
            steps: 220,
            group_size: 8,
            j_votes: 1,
            prompts_per_step: 2,
            tau: 1.0,
            learning_rate: 0.3,
            ..TrainerConfig::default()
        },
        env: EnvConfig { family: presets::training_family(), corruption: None },
        verifier: VerifierConfig::Oracle,
    }
}
