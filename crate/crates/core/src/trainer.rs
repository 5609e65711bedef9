//! Training loops: external-verifier RL, naive self-verification, and the
//! stabilized self-verified loop.
//!
//! One step collects `prompts_per_step` instructions, samples `G`
//! candidates per instruction, votes `J` times per checklist item, turns
//! pass labels into rewards, and applies a single on-policy update from the
//! step-start parameter snapshot:
//!
//! `J(θ) = J_gen(θ) + λ_v J_ver(θ) - λ_p J_part(θ)`
//!
//! In the self-verify modes the generator term treats the response and its
//! verification traces as one trajectory, so an above-average measured
//! reward reinforces both the slots that earned it and the Yes votes that
//! granted it. That shared credit is the always-yes collapse channel;
//! `J_ver` (gold + replay co-training) and `J_part` (Yes-rate penalty on
//! mixed-vote failures, reusing the stored traces) are the stabilizers.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checklist::{corrupt_checklist, derive_checklist, Checklist, CorruptionPlan};
use crate::constraint::{sample_spec, ConstraintError, ConstraintSpec, FamilyConfig};
use crate::oracle::{self, stats_of, OracleError};
use crate::policy::{
    item_kind_token, PolicyParams, PromptFeatures, Sampling, VerifierQuery, PARAM_COUNT,
};
use crate::response::SlotAssignment;
use crate::reward::{self, beta_from_f64, RewardConfig, RewardMode, VerifierOutputs};
use crate::rng::{self, TAG_COTRAIN_PICK, TAG_COTRAIN_TRACE, TAG_CORRUPT, TAG_GEN, TAG_GOLD, TAG_SPEC};
use crate::verifier::{
    aggregate, pass_rates, rate_at_most, rate_reaches, sample_item_votes, CorrelationModel,
    NoiseParams, Verifier, VerifierContext, VerifierError, VoteKey, VoteRow,
};
use crate::{rat, Rat};
use rand::Rng;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error("verifier co-training needs a nonempty gold or replay buffer")]
    EmptyBuffers,
    #[error("non-finite parameter or loss at step {step}; aborting")]
    NonFinite { step: u64 },
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Fixed external verifier; only the generator trains.
    External,
    /// Shared verifier head, no stabilizers.
    NaiveSelf,
    /// Shared head plus gold/replay co-training and the partition penalty.
    Sverl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Advantages are the raw rewards.
    Zero,
    /// Group-standardized advantages.
    GroupMeanStd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub mode: TrainMode,
    pub steps: usize,
    /// Candidates per prompt (G).
    pub group_size: usize,
    /// Verifier votes per item (J).
    pub j_votes: usize,
    pub prompts_per_step: usize,
    /// Pass-label threshold.
    pub tau: f64,
    /// Replay positive-admission threshold.
    pub tau_plus: f64,
    /// Replay negative-admission threshold.
    pub tau_minus: f64,
    /// Partial-credit scale (converted to an exact rational internally).
    pub beta_pc: f64,
    pub reward_mode: RewardMode,
    pub lambda_v: f64,
    pub lambda_p: f64,
    pub eps_low: f64,
    pub eps_high: f64,
    pub learning_rate: f64,
    pub baseline: BaselineMode,
    pub replay_capacity: usize,
    /// Frozen-initial-policy samples labeled by the oracle at startup.
    pub gold_samples: usize,
    /// Verifier tuples per co-training batch.
    pub cotrain_batch: usize,
    /// Traces sampled per co-training tuple.
    pub cotrain_traces: usize,
    pub checkpoint_interval: Option<usize>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            mode: TrainMode::External,
            steps: 100,
            group_size: 8,
            j_votes: 1,
            prompts_per_step: 2,
            tau: 1.0,
            tau_plus: 0.75,
            tau_minus: 0.375,
            beta_pc: 1.0,
            reward_mode: RewardMode::Soft,
            lambda_v: 0.0,
            lambda_p: 0.0,
            eps_low: 0.1,
            eps_high: 0.2,
            learning_rate: 0.05,
            baseline: BaselineMode::GroupMeanStd,
            replay_capacity: 4096,
            gold_samples: 512,
            cotrain_batch: 16,
            cotrain_traces: 8,
            checkpoint_interval: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |msg: String| Err(TrainerError::InvalidConfig(msg));
        if self.steps == 0 || self.group_size == 0 || self.j_votes == 0 || self.prompts_per_step == 0 {
            return bad("steps, group_size, j_votes, prompts_per_step must be >= 1".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau {} outside (0, 1]", self.tau));
        }
        if !(0.0 < self.tau_minus && self.tau_minus < self.tau_plus && self.tau_plus <= 1.0) {
            return bad(format!(
                "need 0 < tau_minus < tau_plus <= 1, got {} and {}",
                self.tau_minus, self.tau_plus
            ));
        }
        if self.eps_low <= 0.0 || self.eps_high <= 0.0 {
            return bad("clip bounds must be positive".into());
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return bad("learning rate must be positive and finite".into());
        }
        if !self.beta_pc.is_finite() || self.beta_pc < 0.0 {
            return bad("beta_pc must be finite and nonnegative".into());
        }
        if matches!(self.baseline, BaselineMode::GroupMeanStd) && self.group_size < 2 {
            return bad("group baseline needs group_size >= 2".into());
        }
        if self.mode != TrainMode::Sverl && (self.lambda_v != 0.0 || self.lambda_p != 0.0) {
            return bad("lambda_v and lambda_p apply to sverl mode only".into());
        }
        if self.mode != TrainMode::External && self.reward_mode == RewardMode::Holistic {
            return bad("holistic rewards need an external verifier".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub family: FamilyConfig,
    #[serde(default)]
    pub corruption: Option<CorruptionPlan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VerifierConfig {
    Oracle,
    Noisy {
        #[serde(flatten)]
        params: NoiseParams,
        #[serde(default)]
        lenient_prob: f64,
    },
}

impl VerifierConfig {
    fn instance(&self) -> Verifier<'static> {
        match *self {
            VerifierConfig::Oracle => Verifier::Oracle,
            VerifierConfig::Noisy { params, lenient_prob } => Verifier::Noisy {
                params,
                correlation: CorrelationModel { lenient_prob },
            },
        }
    }

    pub fn validate(&self) -> Result<(), TrainerError> {
        if let VerifierConfig::Noisy { params, lenient_prob } = self {
            params
                .validate()
                .map_err(TrainerError::InvalidConfig)?;
            if !(0.0..=1.0).contains(lenient_prob) {
                return Err(TrainerError::InvalidConfig("lenient_prob outside [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Full wiring of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub trainer: TrainerConfig,
    pub env: EnvConfig,
    pub verifier: VerifierConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        self.trainer.validate()?;
        self.env.family.validate()?;
        self.verifier.validate()
    }
}

// ---------------------------------------------------------------------------
// The individual update terms
// ---------------------------------------------------------------------------

/// Group-relative advantages: `(r - mean) / (std + 1e-6)` with the
/// population standard deviation, or the raw rewards under the zero
/// baseline.
pub fn grpo_advantages(rewards: &[f64], baseline: BaselineMode) -> Vec<f64> {
    match baseline {
        BaselineMode::Zero => rewards.to_vec(),
        BaselineMode::GroupMeanStd => {
            let n = rewards.len() as f64;
            let mean = rewards.iter().sum::<f64>() / n;
            let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
            let denom = var.sqrt() + 1e-6;
            rewards.iter().map(|r| (r - mean) / denom).collect()
        }
    }
}

/// Ratio-clipped policy-gradient surrogate with asymmetric bounds. With a
/// single update per collected batch the ratio is one and the gradient
/// reduces to `-advantage * d logprob`.
pub fn clipped_pg_loss(
    advantage: f64,
    logprob_new: f64,
    logprob_old: f64,
    eps_low: f64,
    eps_high: f64,
) -> f64 {
    let ratio = (logprob_new - logprob_old).exp();
    let clipped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high);
    -f64::min(ratio * advantage, clipped * advantage)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Positive,
    Negative,
    Skip,
}

/// Replay admission: positives at or above `tau_plus`, negatives at or
/// below `tau_minus`, nothing in between. Both comparisons are inclusive
/// and exact.
pub fn replay_admit(p_hat: Rat, tau_plus: f64, tau_minus: f64) -> Admission {
    if rate_reaches(p_hat, tau_plus) {
        Admission::Positive
    } else if rate_at_most(p_hat, tau_minus) {
        Admission::Negative
    } else {
        Admission::Skip
    }
}

/// Mixed-vote failure contexts: `(i, k)` with a nonzero pass rate on a
/// response that is not a strict success.
pub fn select_partition_subset(p_hat: &[Vec<Rat>], soft_scores: &[Rat]) -> Vec<(usize, usize)> {
    let mut selected = Vec::new();
    for (i, row) in p_hat.iter().enumerate() {
        if soft_scores[i] == rat(1, 1) {
            continue;
        }
        for (k, &rate) in row.iter().enumerate() {
            if rate > rat(0, 1) {
                selected.push((i, k));
            }
        }
    }
    selected
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TupleSource {
    Gold,
    Replay,
}

/// One labeled verifier-training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierTuple {
    pub prompt_id: String,
    pub prompt: PromptFeatures,
    pub slots: SlotAssignment,
    pub item_id: String,
    pub kind: crate::policy::ItemKindToken,
    pub label: bool,
    pub source: TupleSource,
    pub inserted_at: u64,
    /// Admission statistic, recorded for replay tuples.
    pub p_hat: Option<Rat>,
}

impl VerifierTuple {
    pub fn query(&self) -> VerifierQuery {
        VerifierQuery {
            prompt: self.prompt.clone(),
            slots: self.slots,
            kind: self.kind.clone(),
        }
    }
}

/// Value and ascent gradient of one objective term.
pub struct TermContribution {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl TermContribution {
    fn zero() -> Self {
        TermContribution { value: 0.0, grad: vec![0.0; PARAM_COUNT] }
    }
}

/// Sample verification traces for a co-training batch from the snapshot.
pub fn sample_cotrain_traces(
    params: &PolicyParams,
    tuples: &[&VerifierTuple],
    traces_per_tuple: usize,
    seed: u64,
    step: u64,
) -> Vec<Vec<bool>> {
    tuples
        .iter()
        .enumerate()
        .map(|(b, tuple)| {
            let r = params.verifier_yes_prob(&tuple.query());
            (0..traces_per_tuple)
                .map(|g| {
                    let mut rng =
                        rng::stream(seed, &[TAG_COTRAIN_TRACE, step, b as u64, g as u64]);
                    rng.gen::<f64>() < r
                })
                .collect()
        })
        .collect()
}

/// REINFORCE surrogate of the co-training term with frozen traces:
/// `(1/(B G)) Σ 1[z = label] log ρ(z)`. Its gradient is the term's update.
pub fn cotrain_surrogate(
    params: &PolicyParams,
    tuples: &[&VerifierTuple],
    traces: &[Vec<bool>],
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (tuple, row) in tuples.iter().zip(traces) {
        let r = params.verifier_yes_prob(&tuple.query());
        for &z in row {
            let agree = (z == tuple.label) as u8 as f64;
            total += agree * if z { r.ln() } else { (1.0 - r).ln() };
            count += 1;
        }
    }
    total / count.max(1) as f64
}

/// Co-training term: rewards verifier traces that agree with the stored
/// label. Returns the mean agreement as the value.
pub fn verifier_cotrain_term(
    params: &PolicyParams,
    tuples: &[&VerifierTuple],
    traces: &[Vec<bool>],
) -> TermContribution {
    let mut out = TermContribution::zero();
    let mut count = 0usize;
    let mut agreements = 0usize;
    for (tuple, row) in tuples.iter().zip(traces) {
        let query = tuple.query();
        let r = params.verifier_yes_prob(&query);
        for &z in row {
            count += 1;
            let agree = z == tuple.label;
            agreements += agree as usize;
            if agree {
                // d log rho(z) / d logit = z - r.
                let coef = (z as u8 as f64) - r;
                params.add_verifier_logit_grad(&query, coef, &mut out.grad);
            }
        }
    }
    let scale = 1.0 / count.max(1) as f64;
    for g in &mut out.grad {
        *g *= scale;
    }
    out.value = agreements as f64 / count.max(1) as f64;
    out
}

/// One selected failing context with its stored verification traces.
pub struct PartitionContext {
    pub query: VerifierQuery,
    pub votes: Vec<bool>,
}

/// Surrogate of the partition term with frozen traces:
/// `(1/|S|) Σ (1/J) Σ_j d_j log ρ(z_j)`.
pub fn partition_surrogate(params: &PolicyParams, contexts: &[PartitionContext]) -> f64 {
    let mut total = 0.0;
    for ctx in contexts {
        let r = params.verifier_yes_prob(&ctx.query);
        let j = ctx.votes.len() as f64;
        for &d in &ctx.votes {
            if d {
                total += r.ln() / j;
            }
        }
    }
    total / contexts.len().max(1) as f64
}

/// Partition-style Yes-rate term on the selected contexts, estimated from
/// the stored traces (no extra verifier passes). Subtracting it lowers the
/// Yes-rate where the verifier approved a failing response. The value is
/// the mean stored pass rate of the selection.
pub fn partition_penalty_term(
    params: &PolicyParams,
    contexts: &[PartitionContext],
) -> TermContribution {
    let mut out = TermContribution::zero();
    if contexts.is_empty() {
        return out;
    }
    let scale = 1.0 / contexts.len() as f64;
    let mut rate_sum = 0.0;
    for ctx in contexts {
        let r = params.verifier_yes_prob(&ctx.query);
        let j = ctx.votes.len() as f64;
        let yes = ctx.votes.iter().filter(|&&d| d).count() as f64;
        rate_sum += yes / j;
        if yes > 0.0 {
            // Sum over yes traces of d log r / d logit = (1 - r).
            params.add_verifier_logit_grad(&ctx.query, scale * yes / j * (1.0 - r), &mut out.grad);
        }
    }
    out.value = rate_sum * scale;
    out
}

// ---------------------------------------------------------------------------
// The step loop
// ---------------------------------------------------------------------------

/// Per-step instrumentation, one JSONL row per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    /// Measured mean generator reward over the step's candidates.
    pub mean_reward: f64,
    /// Oracle strict-success rate of the candidates.
    pub oracle_strict_rate: f64,
    /// Oracle mean partial credit.
    pub oracle_soft_mean: f64,
    /// Mean pass rate on items whose oracle bit is 0; absent when the step
    /// produced no failing item (or votes were not collected).
    pub yes_rate_failing: Option<f64>,
    pub replay_pos: u64,
    pub replay_neg: u64,
    pub partition_size: u64,
    pub loss_gen: f64,
    /// Co-training agreement rate.
    pub ver_agreement: f64,
    /// Mean stored pass rate over the partition selection.
    pub partition_yes_rate: f64,
    pub verifier_calls: u64,
    pub grad_norm: f64,
}

/// Everything a finished run hands back.
pub struct TrainOutcome {
    pub metrics: Vec<StepMetrics>,
    pub final_params: PolicyParams,
    pub checkpoints: Vec<(u64, crate::policy::Checkpoint)>,
}

pub struct Trainer {
    cfg: TrainerConfig,
    env: EnvConfig,
    verifier_cfg: VerifierConfig,
    seed: u64,
    params: PolicyParams,
    beta: Rat,
    gold: Vec<VerifierTuple>,
    replay: VecDeque<VerifierTuple>,
}

impl Trainer {
    /// Build a trainer; `init` warm-starts the parameters (the gold buffer
    /// is labeled from whatever the initial parameters are).
    pub fn new(
        run: &RunConfig,
        seed: u64,
        init: Option<PolicyParams>,
    ) -> Result<Self, TrainerError> {
        run.validate()?;
        let params = init.unwrap_or_else(|| PolicyParams::init(rng::derive(seed, &[TAG_GEN, 0])));
        let mut trainer = Trainer {
            cfg: run.trainer,
            env: run.env.clone(),
            verifier_cfg: run.verifier,
            seed,
            params,
            beta: beta_from_f64(run.trainer.beta_pc),
            gold: Vec::new(),
            replay: VecDeque::new(),
        };
        if trainer.cfg.mode == TrainMode::Sverl && trainer.cfg.lambda_v != 0.0 {
            trainer.build_gold_buffer()?;
        }
        Ok(trainer)
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn gold_len(&self) -> usize {
        self.gold.len()
    }

    pub fn replay(&self) -> impl Iterator<Item = &VerifierTuple> {
        self.replay.iter()
    }

    /// Gold tuples: frozen-initial-policy samples, every faithful checklist
    /// item labeled by the oracle.
    fn build_gold_buffer(&mut self) -> Result<(), TrainerError> {
        for g in 0..self.cfg.gold_samples as u64 {
            let spec = sample_spec(&self.env.family, rng::derive(self.seed, &[TAG_GOLD, g]))?;
            let prompt = PromptFeatures::of(&spec);
            let checklist = derive_checklist(&spec);
            let mut rng = rng::stream(self.seed, &[TAG_GOLD, g, 1]);
            let response = self.params.sample_response(&prompt, Sampling::Standard, &mut rng);
            let truth = oracle::ground_truth(&spec, &checklist, &response.text)?;
            for (k, item) in checklist.items.iter().enumerate() {
                self.gold.push(VerifierTuple {
                    prompt_id: spec.id.clone(),
                    prompt: prompt.clone(),
                    slots: response.slots,
                    item_id: item.id.clone(),
                    kind: item_kind_token(&spec, item),
                    label: truth.bits[k].unwrap_or(true),
                    source: TupleSource::Gold,
                    inserted_at: 0,
                    p_hat: None,
                });
            }
        }
        Ok(())
    }

    fn checklist_for(&self, spec: &ConstraintSpec, step: u64, prompt_idx: u64) -> Checklist {
        let derived = derive_checklist(spec);
        match &self.env.corruption {
            None => derived,
            Some(plan) => {
                let mut plan = *plan;
                plan.seed = rng::derive(self.seed, &[TAG_CORRUPT, plan.seed, step, prompt_idx]);
                corrupt_checklist(&derived, &plan)
            }
        }
    }

    /// One collected batch and one parameter update.
    pub fn step(&mut self, t: u64) -> Result<StepMetrics, TrainerError> {
        let cfg = self.cfg;
        let snapshot = self.params.clone();
        let self_verify = matches!(cfg.mode, TrainMode::NaiveSelf | TrainMode::Sverl);
        let external = self.verifier_cfg.instance();
        let reward_cfg = RewardConfig { beta_pc: self.beta, mode: cfg.reward_mode };

        let mut grad_gen = vec![0.0; PARAM_COUNT];
        let mut partition_contexts: Vec<PartitionContext> = Vec::new();
        let mut verifier_calls = 0u64;
        let (mut replay_pos, mut replay_neg) = (0u64, 0u64);
        let mut loss_gen = 0.0;
        let (mut reward_sum, mut strict_sum, mut soft_sum) = (0.0, 0.0, 0.0);
        let (mut failing_rate_sum, mut failing_items) = (0.0, 0u64);
        let candidates_total = (cfg.prompts_per_step * cfg.group_size) as f64;

        for p in 0..cfg.prompts_per_step as u64 {
            let spec = sample_spec(&self.env.family, rng::derive(self.seed, &[TAG_SPEC, t, p]))?;
            let prompt = PromptFeatures::of(&spec);
            let checklist = self.checklist_for(&spec, t, p);

            let mut responses = Vec::with_capacity(cfg.group_size);
            for i in 0..cfg.group_size as u64 {
                let mut rng = rng::stream(self.seed, &[TAG_GEN, t, p, i]);
                responses.push(snapshot.sample_response(&prompt, Sampling::Standard, &mut rng));
            }

            let mut rewards = Vec::with_capacity(cfg.group_size);
            let mut rows: Vec<Option<VoteRow>> = Vec::with_capacity(cfg.group_size);
            let mut prob_rows: Vec<Vec<f64>> = Vec::with_capacity(cfg.group_size);
            let mut p_hat_rows: Vec<Vec<Rat>> = Vec::with_capacity(cfg.group_size);
            let mut soft_scores: Vec<Rat> = Vec::with_capacity(cfg.group_size);

            for (i, response) in responses.iter().enumerate() {
                let truth = oracle::ground_truth(&spec, &checklist, &response.text)?;
                let stats = stats_of(&truth);
                let ctx = VerifierContext {
                    spec: &spec,
                    prompt: &prompt,
                    slots: response.slots,
                    checklist: &checklist,
                    truth: &truth,
                };
                let key = VoteKey { seed: self.seed, path: [t, p, i as u64] };
                let breakdown = if cfg.reward_mode == RewardMode::Holistic {
                    verifier_calls += 1;
                    let strict = stats.map_or(false, |s| s.strict);
                    let judgment = external.holistic_judgment(strict, key)?;
                    rows.push(None);
                    prob_rows.push(Vec::new());
                    p_hat_rows.push(Vec::new());
                    reward::reward(&reward_cfg, VerifierOutputs::Holistic(judgment), stats)
                        .expect("holistic outputs match holistic mode")
                } else {
                    let judge: &Verifier = if self_verify {
                        &Verifier::Learned(&snapshot)
                    } else {
                        &external
                    };
                    let probs = judge.item_yes_probs(&ctx);
                    let row = sample_item_votes(&probs, judge.lenient_prob(), cfg.j_votes, key);
                    verifier_calls += (checklist.len() * cfg.j_votes) as u64;
                    let p_hat = pass_rates(&row);
                    let labels = aggregate(&p_hat, cfg.tau);
                    for (k, bit) in truth.bits.iter().enumerate() {
                        if *bit == Some(false) {
                            failing_items += 1;
                            failing_rate_sum +=
                                *p_hat[k].numer() as f64 / *p_hat[k].denom() as f64;
                        }
                    }
                    rows.push(Some(row));
                    prob_rows.push(probs);
                    p_hat_rows.push(p_hat);
                    reward::reward(&reward_cfg, VerifierOutputs::Items(&labels), stats)
                        .expect("item outputs match checklist modes")
                };
                if let Some(stats) = breakdown.oracle.as_ref() {
                    strict_sum += stats.strict as u8 as f64;
                    soft_sum += *stats.partial.numer() as f64 / *stats.partial.denom() as f64;
                }
                soft_scores.push(breakdown.s);
                reward_sum += breakdown.r_f64();
                rewards.push(breakdown.r_f64());
            }

            let advantages = grpo_advantages(&rewards, cfg.baseline);
            for (i, response) in responses.iter().enumerate() {
                let a = advantages[i];
                loss_gen += clipped_pg_loss(a, response.log_prob, response.log_prob, cfg.eps_low, cfg.eps_high)
                    / candidates_total;
                snapshot.add_log_prob_grad(
                    &prompt,
                    &response.slots,
                    a / candidates_total,
                    &mut grad_gen,
                );
                if self_verify {
                    // Verification traces share the trajectory's advantage;
                    // credit is averaged over the K*J decisions, matching
                    // the per-decision normalization of the response side.
                    let row = rows[i].as_ref().expect("self modes score checklists");
                    let decisions = (row.item_count() * row.votes_per_item()) as f64;
                    for (k, item_votes) in row.votes.iter().enumerate() {
                        let query = VerifierQuery {
                            prompt: prompt.clone(),
                            slots: responses[i].slots,
                            kind: item_kind_token(&spec, &checklist.items[k]),
                        };
                        let r = prob_rows[i][k];
                        for &z in item_votes {
                            let coef =
                                ((z as u8 as f64) - r) * a / (candidates_total * decisions);
                            snapshot.add_verifier_logit_grad(&query, coef, &mut grad_gen);
                        }
                    }
                }
                let _ = response;
            }

            if cfg.mode == TrainMode::Sverl {
                for i in 0..cfg.group_size {
                    for (k, item) in checklist.items.iter().enumerate() {
                        let p_hat = p_hat_rows[i][k];
                        match replay_admit(p_hat, cfg.tau_plus, cfg.tau_minus) {
                            Admission::Skip => {}
                            admission => {
                                let label = admission == Admission::Positive;
                                replay_pos += label as u64;
                                replay_neg += !label as u64;
                                if self.replay.len() == cfg.replay_capacity {
                                    self.replay.pop_front();
                                }
                                self.replay.push_back(VerifierTuple {
                                    prompt_id: spec.id.clone(),
                                    prompt: prompt.clone(),
                                    slots: responses[i].slots,
                                    item_id: item.id.clone(),
                                    kind: item_kind_token(&spec, item),
                                    label,
                                    source: TupleSource::Replay,
                                    inserted_at: t,
                                    p_hat: Some(p_hat),
                                });
                            }
                        }
                    }
                }
                for (i, k) in select_partition_subset(&p_hat_rows, &soft_scores) {
                    partition_contexts.push(PartitionContext {
                        query: VerifierQuery {
                            prompt: prompt.clone(),
                            slots: responses[i].slots,
                            kind: item_kind_token(&spec, &checklist.items[k]),
                        },
                        votes: rows[i].as_ref().unwrap().votes[k].clone(),
                    });
                }
            }
        }

        // Stabilizer terms, from the same snapshot.
        let mut ver_term = TermContribution::zero();
        if cfg.mode == TrainMode::Sverl && cfg.lambda_v != 0.0 && cfg.cotrain_batch > 0 {
            let tuples = self.pick_cotrain_batch(t)?;
            let traces =
                sample_cotrain_traces(&snapshot, &tuples, cfg.cotrain_traces, self.seed, t);
            verifier_calls += (tuples.len() * cfg.cotrain_traces) as u64;
            ver_term = verifier_cotrain_term(&snapshot, &tuples, &traces);
        }
        let part_term = if cfg.mode == TrainMode::Sverl && cfg.lambda_p != 0.0 {
            partition_penalty_term(&snapshot, &partition_contexts)
        } else {
            TermContribution::zero()
        };

        let mut grad_norm_sq = 0.0;
        {
            let values = self.params.values_mut();
            for j in 0..PARAM_COUNT {
                let g = grad_gen[j] + cfg.lambda_v * ver_term.grad[j] - cfg.lambda_p * part_term.grad[j];
                grad_norm_sq += g * g;
                values[j] += cfg.learning_rate * g;
            }
        }
        if !grad_norm_sq.is_finite() || self.params.values().iter().any(|v| !v.is_finite()) {
            return Err(TrainerError::NonFinite { step: t });
        }

        Ok(StepMetrics {
            step: t,
            mean_reward: reward_sum / candidates_total,
            oracle_strict_rate: strict_sum / candidates_total,
            oracle_soft_mean: soft_sum / candidates_total,
            yes_rate_failing: (failing_items > 0)
                .then(|| failing_rate_sum / failing_items as f64),
            replay_pos,
            replay_neg,
            partition_size: partition_contexts.len() as u64,
            loss_gen,
            ver_agreement: ver_term.value,
            partition_yes_rate: part_term.value,
            verifier_calls,
            grad_norm: grad_norm_sq.sqrt(),
        })
    }

    /// Alternate gold and replay picks; fall back to the nonempty buffer.
    fn pick_cotrain_batch(&self, t: u64) -> Result<Vec<&VerifierTuple>, TrainerError> {
        if self.gold.is_empty() && self.replay.is_empty() {
            return Err(TrainerError::EmptyBuffers);
        }
        let mut batch = Vec::with_capacity(self.cfg.cotrain_batch);
        for b in 0..self.cfg.cotrain_batch as u64 {
            let mut rng = rng::stream(self.seed, &[TAG_COTRAIN_PICK, t, b]);
            let want_gold = b % 2 == 0;
            let tuple = if (want_gold && !self.gold.is_empty()) || self.replay.is_empty() {
                &self.gold[rng.gen_range(0..self.gold.len())]
            } else {
                &self.replay[rng.gen_range(0..self.replay.len())]
            };
            batch.push(tuple);
        }
        Ok(batch)
    }

    /// Run all configured steps.
    pub fn run(mut self) -> Result<TrainOutcome, TrainerError> {
        let mut metrics = Vec::with_capacity(self.cfg.steps);
        let mut checkpoints = Vec::new();
        for t in 0..self.cfg.steps as u64 {
            metrics.push(self.step(t)?);
            if let Some(every) = self.cfg.checkpoint_interval {
                if every > 0 && (t + 1) % every as u64 == 0 {
                    checkpoints.push((t, self.params.to_checkpoint()));
                }
            }
        }
        Ok(TrainOutcome { metrics, final_params: self.params, checkpoints })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd;
    use crate::presets;

    #[test]
    fn grpo_advantages_standardize_the_group() {
        let a = grpo_advantages(&[1.0, 0.0, 0.0, 1.0], BaselineMode::GroupMeanStd);
        for (got, want) in a.iter().zip([1.0, -1.0, -1.0, 1.0]) {
            assert!((got - want).abs() < 1e-5, "{got} vs {want}");
        }
        let flat = grpo_advantages(&[0.5; 4], BaselineMode::GroupMeanStd);
        assert!(flat.iter().all(|x| x.abs() < 1e-9));
        let raw = grpo_advantages(&[0.3, 0.9], BaselineMode::Zero);
        assert_eq!(raw, vec![0.3, 0.9]);
    }

    #[test]
    fn clip_loss_on_policy_and_clipped_regions() {
        // ratio = 1: the surrogate is -advantage.
        assert!((clipped_pg_loss(0.7, -2.0, -2.0, 0.1, 0.2) + 0.7).abs() < 1e-15);
        // ratio = 1.5 with positive advantage clips at 1.2.
        let lp_new = (1.5f64).ln();
        let loss = clipped_pg_loss(1.0, lp_new, 0.0, 0.1, 0.2);
        assert!((loss + 1.2).abs() < 1e-12);
        // Unclipped region: gradient in logprob_new matches finite
        // differences.
        let advantage = -0.8;
        let f = |lp: &[f64]| clipped_pg_loss(advantage, lp[0], 0.0, 0.1, 0.2);
        let numeric = fd::central_grad(f, &[0.05], 1e-6)[0];
        let ratio = (0.05f64).exp();
        let analytic = -advantage * ratio;
        assert!((numeric - analytic).abs() / analytic.abs() < 1e-6);
    }

    #[test]
    fn replay_admission_thresholds_are_inclusive() {
        assert_eq!(replay_admit(rat(4, 5), 0.75, 0.375), Admission::Positive);
        assert_eq!(replay_admit(rat(3, 8), 0.75, 0.375), Admission::Negative);
        assert_eq!(replay_admit(rat(1, 2), 0.75, 0.375), Admission::Skip);
        assert_eq!(replay_admit(rat(3, 4), 0.75, 0.375), Admission::Positive);
    }

    #[test]
    fn partition_subset_is_mixed_vote_failures() {
        let p_hat = vec![
            vec![rat(2, 3), rat(0, 1)],
            vec![rat(1, 1), rat(1, 1)],
            vec![rat(1, 3), rat(1, 1)],
        ];
        let s = vec![rat(1, 2), rat(1, 1), rat(2, 3)];
        let selected = select_partition_subset(&p_hat, &s);
        assert_eq!(selected, vec![(0, 0), (2, 0), (2, 1)]);
    }

    fn demo_run_config(mode: TrainMode) -> RunConfig {
        RunConfig {
            trainer: TrainerConfig {
                mode,
                steps: 3,
                group_size: 4,
                j_votes: 3,
                prompts_per_step: 1,
                tau: 0.75,
                lambda_v: if mode == TrainMode::Sverl { 1.0 } else { 0.0 },
                lambda_p: if mode == TrainMode::Sverl { 0.3 } else { 0.0 },
                gold_samples: 8,
                cotrain_batch: 4,
                cotrain_traces: 4,
                learning_rate: 0.05,
                ..TrainerConfig::default()
            },
            env: EnvConfig { family: presets::demo_family(), corruption: None },
            verifier: VerifierConfig::Oracle,
        }
    }

    #[test]
    fn config_validation_catches_bad_wiring() {
        let mut cfg = demo_run_config(TrainMode::NaiveSelf);
        cfg.trainer.lambda_v = 1.0;
        assert!(matches!(cfg.validate(), Err(TrainerError::InvalidConfig(_))));
        let mut cfg = demo_run_config(TrainMode::NaiveSelf);
        cfg.trainer.lambda_v = 0.0;
        cfg.trainer.lambda_p = 0.0;
        cfg.trainer.reward_mode = RewardMode::Holistic;
        assert!(matches!(cfg.validate(), Err(TrainerError::InvalidConfig(_))));
        let mut cfg = demo_run_config(TrainMode::External);
        cfg.trainer.tau_minus = 0.8;
        assert!(matches!(cfg.validate(), Err(TrainerError::InvalidConfig(_))));
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let cfg = demo_run_config(TrainMode::Sverl);
        let a = Trainer::new(&cfg, 5, None).unwrap().run().unwrap();
        let b = Trainer::new(&cfg, 5, None).unwrap().run().unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.final_params.values(), b.final_params.values());
        let c = Trainer::new(&cfg, 6, None).unwrap().run().unwrap();
        assert_ne!(a.metrics, c.metrics);
    }

    #[test]
    fn budget_accounting_matches_the_formula() {
        let cfg = demo_run_config(TrainMode::Sverl);
        let outcome = Trainer::new(&cfg, 7, None).unwrap().run().unwrap();
        // Fixed demo family: K = 3 every prompt.
        let t = &cfg.trainer;
        let expected = (t.prompts_per_step * t.group_size * 3 * t.j_votes
            + t.cotrain_batch * t.cotrain_traces) as u64;
        for m in &outcome.metrics {
            assert_eq!(m.verifier_calls, expected, "step {}", m.step);
        }
    }

    #[test]
    fn sverl_with_zero_weights_equals_naive_update() {
        let mut sverl = demo_run_config(TrainMode::Sverl);
        sverl.trainer.lambda_v = 0.0;
        sverl.trainer.lambda_p = 0.0;
        sverl.trainer.gold_samples = 0;
        let naive = RunConfig {
            trainer: TrainerConfig { mode: TrainMode::NaiveSelf, ..sverl.trainer },
            ..sverl.clone()
        };
        let a = Trainer::new(&sverl, 11, None).unwrap().run().unwrap();
        let b = Trainer::new(&naive, 11, None).unwrap().run().unwrap();
        assert_eq!(a.final_params.values(), b.final_params.values());
    }

    #[test]
    fn replay_tuples_satisfy_their_admission_inequality() {
        let cfg = demo_run_config(TrainMode::Sverl);
        let mut trainer = Trainer::new(&cfg, 13, None).unwrap();
        for t in 0..6 {
            trainer.step(t).unwrap();
        }
        let mut seen = 0;
        for tuple in trainer.replay() {
            let p_hat = tuple.p_hat.expect("replay tuples record their statistic");
            if tuple.label {
                assert!(rate_reaches(p_hat, cfg.trainer.tau_plus));
            } else {
                assert!(rate_at_most(p_hat, cfg.trainer.tau_minus));
            }
            seen += 1;
        }
        assert!(seen > 0, "expected some replay admissions");
    }

    #[test]
    fn empty_buffers_error_in_sverl_mode() {
        // Replay admission precedes co-training inside a step, so the
        // error surfaces when a batch is requested with nothing buffered.
        let mut cfg = demo_run_config(TrainMode::Sverl);
        cfg.trainer.gold_samples = 0;
        let trainer = Trainer::new(&cfg, 17, None).unwrap();
        assert!(matches!(trainer.pick_cotrain_batch(0), Err(TrainerError::EmptyBuffers)));
    }

    #[test]
    fn cotrain_term_signs_and_fd() {
        let params = PolicyParams::init(23);
        let spec = sample_spec(&presets::demo_family(), 3).unwrap();
        let prompt = PromptFeatures::of(&spec);
        let checklist = derive_checklist(&spec);
        let truth_labels = [true, false, true];
        let tuples: Vec<VerifierTuple> = checklist
            .items
            .iter()
            .enumerate()
            .map(|(k, item)| VerifierTuple {
                prompt_id: spec.id.clone(),
                prompt: prompt.clone(),
                slots: SlotAssignment::from_indices([2, 1, 0, 0, 0, 0, 0, 1]),
                item_id: item.id.clone(),
                kind: item_kind_token(&spec, item),
                label: truth_labels[k],
                source: TupleSource::Gold,
                inserted_at: 0,
                p_hat: None,
            })
            .collect();
        let refs: Vec<&VerifierTuple> = tuples.iter().collect();
        let traces = sample_cotrain_traces(&params, &refs, 6, 31, 0);
        let term = verifier_cotrain_term(&params, &refs, &traces);

        // Gradient matches finite differences of the frozen-trace surrogate.
        let numeric = fd::central_grad(
            |v| {
                let p = PolicyParams::from_values(v.to_vec());
                cotrain_surrogate(&p, &refs, &traces)
            },
            params.values(),
            1e-5,
        );
        assert!(fd::max_rel_diff(&term.grad, &numeric) < 1e-4);

        // One ascent step on an isolated tuple moves its yes-probability
        // toward the label. (Tuples in a batch share embeddings, so the
        // per-tuple sign only isolates cleanly one at a time.)
        for tuple in &tuples {
            let one = vec![tuple];
            let traces = sample_cotrain_traces(&params, &one, 8, 41, 0);
            assert!(
                traces[0].iter().any(|&z| z == tuple.label),
                "need at least one agreeing trace for the sign check"
            );
            let term = verifier_cotrain_term(&params, &one, &traces);
            let mut stepped = params.clone();
            for (v, g) in stepped.values_mut().iter_mut().zip(&term.grad) {
                *v += 0.5 * g;
            }
            let before = params.verifier_yes_prob(&tuple.query());
            let after = stepped.verifier_yes_prob(&tuple.query());
            if tuple.label {
                assert!(after > before, "yes-prob should rise on positive labels");
            } else {
                assert!(after < before, "yes-prob should fall on negative labels");
            }
        }

        // A saturated verifier that already matches the label has a null
        // gradient.
        let mut saturated = params.clone();
        saturated.values_mut()[PARAM_COUNT - 1] = 35.0;
        let all_yes: Vec<VerifierTuple> = tuples
            .iter()
            .map(|t| VerifierTuple { label: true, ..t.clone() })
            .collect();
        let refs: Vec<&VerifierTuple> = all_yes.iter().collect();
        let traces = sample_cotrain_traces(&saturated, &refs, 4, 37, 0);
        let term = verifier_cotrain_term(&saturated, &refs, &traces);
        let norm: f64 = term.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-10, "saturated agreement should give ~zero gradient, got {norm}");
        assert_eq!(term.value, 1.0);
    }

    #[test]
    fn partition_term_lowers_selected_yes_rates() {
        let params = PolicyParams::init(29);
        let spec = sample_spec(&presets::demo_family(), 5).unwrap();
        let prompt = PromptFeatures::of(&spec);
        let checklist = derive_checklist(&spec);
        let context = PartitionContext {
            query: VerifierQuery {
                prompt: prompt.clone(),
                slots: SlotAssignment::from_indices([1, 0, 1, 0, 0, 2, 1, 0]),
                kind: item_kind_token(&spec, &checklist.items[0]),
            },
            votes: vec![true, false, true],
        };
        let term = partition_penalty_term(&params, &[context]);
        assert!((term.value - 2.0 / 3.0).abs() < 1e-12);

        let numeric = fd::central_grad(
            |v| {
                let p = PolicyParams::from_values(v.to_vec());
                partition_surrogate(
                    &p,
                    &[PartitionContext {
                        query: VerifierQuery {
                            prompt: prompt.clone(),
                            slots: SlotAssignment::from_indices([1, 0, 1, 0, 0, 2, 1, 0]),
                            kind: item_kind_token(&spec, &checklist.items[0]),
                        },
                        votes: vec![true, false, true],
                    }],
                )
            },
            params.values(),
            1e-5,
        );
        assert!(fd::max_rel_diff(&term.grad, &numeric) < 1e-4);

        // Subtracting the term in the shared objective lowers the yes-prob
        // on the selected context.
        let query = VerifierQuery {
            prompt,
            slots: SlotAssignment::from_indices([1, 0, 1, 0, 0, 2, 1, 0]),
            kind: item_kind_token(&spec, &checklist.items[0]),
        };
        let before = params.verifier_yes_prob(&query);
        let mut stepped = params.clone();
        for (v, g) in stepped.values_mut().iter_mut().zip(&term.grad) {
            *v -= 0.5 * g;
        }
        assert!(stepped.verifier_yes_prob(&query) < before);

        // Empty selection contributes nothing.
        let empty = partition_penalty_term(&params, &[]);
        assert_eq!(empty.value, 0.0);
        assert!(empty.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn naive_mode_inflates_yes_rate_on_failing_items() {
        // The collapse witness: the shared verifier ends far more
        // permissive on oracle-failing items than it started.
        let cfg = RunConfig {
            trainer: TrainerConfig {
                mode: TrainMode::NaiveSelf,
                steps: 120,
                group_size: 8,
                j_votes: 3,
                prompts_per_step: 2,
                tau: 0.75,
                learning_rate: 0.35,
                ..TrainerConfig::default()
            },
            env: EnvConfig { family: presets::demo_family(), corruption: None },
            verifier: VerifierConfig::Oracle,
        };
        let outcome = Trainer::new(&cfg, 3, None).unwrap().run().unwrap();
        let first = outcome.metrics[0].yes_rate_failing.expect("failing items at start");
        let last: Vec<f64> = outcome
            .metrics
            .iter()
            .rev()
            .filter_map(|m| m.yes_rate_failing)
            .take(10)
            .collect();
        let last = last.iter().sum::<f64>() / last.len() as f64;
        assert!(
            last > first + 0.2,
            "yes-rate on failing items should inflate, got {first} -> {last}"
        );
        assert!(last > 0.9, "expected near-saturated approval, got {last}");
    }

    #[test]
    fn non_finite_steps_abort_with_diagnostics() {
        let mut cfg = demo_run_config(TrainMode::External);
        cfg.trainer.learning_rate = 1e300;
        cfg.trainer.steps = 12;
        let result = Trainer::new(&cfg, 3, None).unwrap().run();
        assert!(matches!(result, Err(TrainerError::NonFinite { .. })));
    }

    #[test]
    fn oracle_external_training_improves_strict_success() {
        let cfg = RunConfig {
            trainer: TrainerConfig {
                mode: TrainMode::External,
                steps: 60,
                group_size: 8,
                j_votes: 1,
                prompts_per_step: 2,
                tau: 1.0,
                learning_rate: 0.3,
                ..TrainerConfig::default()
            },
            env: EnvConfig { family: presets::demo_family(), corruption: None },
            verifier: VerifierConfig::Oracle,
        };
        let outcome = Trainer::new(&cfg, 41, None).unwrap().run().unwrap();
        let first = outcome.metrics[0].oracle_strict_rate;
        let last5: f64 = outcome.metrics.iter().rev().take(5).map(|m| m.oracle_strict_rate).sum::<f64>() / 5.0;
        assert!(
            last5 > first + 0.2,
            "expected training progress, start {first}, trailing {last5}"
        );
    }
}
