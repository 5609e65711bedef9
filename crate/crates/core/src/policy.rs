//! The trainable model: a factored categorical generator over response
//! slots plus a verification head, both reading one shared embedding table.
//!
//! Token universe (one embedding row each, dimension [`EMB_DIM`]):
//!
//! - prompt-feature tokens describing the constraints of an instruction,
//! - slot-value tokens, one per possible value of each response slot,
//! - checklist item-kind tokens (one per constraint kind, plus spurious).
//!
//! Generation: the prompt embedding `h` is the mean of the present
//! prompt-feature rows; slot `m` is sampled from `softmax(U_m h)`.
//! Verification: `yes = logistic(w . [h; mean slot-value rows; item-kind
//! row] + b_v)`. The prompt rows feed both heads and the slot-value rows
//! feed the verifier on exactly the tokens the generator emits, which is
//! the coupling that lets a shared update trade generation quality against
//! verifier permissiveness.
//!
//! All parameters live in one flat vector, so gradients can be checked
//! against finite differences and checkpoints reload byte-exact.

use serde::{Deserialize, Serialize};

use crate::checklist::{ChecklistItem, ItemSemantics};
use crate::constraint::{Constraint, ConstraintSpec, KEYWORDS};
use crate::response::{SlotAssignment, SLOT_CARDS, SLOT_COUNT};
use crate::rng::{self, TAG_INIT};
use rand::Rng;
use rand_distr::StandardNormal;

/// Embedding dimension.
pub const EMB_DIM: usize = 16;

const PT_ITEMCOUNT: usize = 0; // 5 tokens, n = 1..=5
const PT_INCLUDE: usize = 5; // 4 tokens, one per keyword
const PT_EXCLUDE: usize = 9;
const PT_MINWORDS: usize = 13; // 4 bucket tokens
const PT_MAXWORDS: usize = 17;
const PT_ENDS_WITH: usize = 21;
const PT_LOWERCASE: usize = 22;
/// Number of prompt-feature tokens.
pub const PROMPT_TOKENS: usize = 23;

/// Offsets of each slot family inside the slot-value token block.
const SLOT_OFFSETS: [usize; SLOT_COUNT] = [0, 5, 7, 9, 11, 13, 17, 19];
/// Number of slot-value tokens.
pub const SLOT_VALUE_TOKENS: usize = 21;

/// Constraint-kind tokens, then the spurious token.
pub const KIND_TOKENS: usize = 8;
const KIND_SPURIOUS: usize = 7;

/// Total embedding rows.
pub const TOKEN_COUNT: usize = PROMPT_TOKENS + SLOT_VALUE_TOKENS + KIND_TOKENS;

const EMB_LEN: usize = TOKEN_COUNT * EMB_DIM;
const U_BASE: usize = EMB_LEN;
const U_LEN: usize = SLOT_VALUE_TOKENS * EMB_DIM;
const W_BASE: usize = U_BASE + U_LEN;
const W_LEN: usize = 3 * EMB_DIM;
const BV_INDEX: usize = W_BASE + W_LEN;
/// Length of the flattened parameter vector.
pub const PARAM_COUNT: usize = BV_INDEX + 1;

fn word_bucket(n: u32) -> usize {
    (((n.saturating_sub(1)) / 8) as usize).min(3)
}

fn keyword_index(word: &str) -> usize {
    KEYWORDS
        .iter()
        .position(|w| w.eq_ignore_ascii_case(word))
        .expect("keyword from the tracked vocabulary")
}

fn prompt_token_of(c: &Constraint) -> usize {
    match c {
        Constraint::ItemCount { n } => PT_ITEMCOUNT + (*n as usize - 1),
        Constraint::IncludeKeyword { word } => PT_INCLUDE + keyword_index(word),
        Constraint::ExcludeKeyword { word } => PT_EXCLUDE + keyword_index(word),
        Constraint::MinWords { n } => PT_MINWORDS + word_bucket(*n),
        Constraint::MaxWords { n } => PT_MAXWORDS + word_bucket(*n),
        Constraint::EndsWith { .. } => PT_ENDS_WITH,
        Constraint::AllLowercase => PT_LOWERCASE,
    }
}

/// Constraint-kind index shared between checklist items and kind tokens.
pub fn constraint_kind_index(c: &Constraint) -> usize {
    match c {
        Constraint::ItemCount { .. } => 0,
        Constraint::IncludeKeyword { .. } => 1,
        Constraint::ExcludeKeyword { .. } => 2,
        Constraint::MinWords { .. } => 3,
        Constraint::MaxWords { .. } => 4,
        Constraint::EndsWith { .. } => 5,
        Constraint::AllLowercase => 6,
    }
}

/// Prompt-feature token set of one instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptFeatures {
    pub tokens: Vec<usize>,
}

impl PromptFeatures {
    pub fn of(spec: &ConstraintSpec) -> Self {
        let mut tokens: Vec<usize> = spec.constraints.iter().map(prompt_token_of).collect();
        tokens.sort_unstable();
        tokens.dedup();
        PromptFeatures { tokens }
    }
}

/// Item-kind token(s) of a checklist item; merged items average the kind
/// rows of the constraints they cover.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ItemKindToken {
    Kinds(Vec<usize>),
    Spurious,
}

pub fn item_kind_token(spec: &ConstraintSpec, item: &ChecklistItem) -> ItemKindToken {
    match &item.semantics {
        ItemSemantics::Faithful { index } => {
            ItemKindToken::Kinds(vec![constraint_kind_index(&spec.constraints[*index])])
        }
        ItemSemantics::Merged { indices } => {
            let mut kinds: Vec<usize> = indices
                .iter()
                .map(|&i| constraint_kind_index(&spec.constraints[i]))
                .collect();
            kinds.sort_unstable();
            kinds.dedup();
            ItemKindToken::Kinds(kinds)
        }
        ItemSemantics::Spurious => ItemKindToken::Spurious,
    }
}

/// One verification question for the learned head.
#[derive(Debug, Clone)]
pub struct VerifierQuery {
    pub prompt: PromptFeatures,
    pub slots: SlotAssignment,
    pub kind: ItemKindToken,
}

/// A sampled response with its exact log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSample {
    pub slots: SlotAssignment,
    pub log_prob: f64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Sample each slot from its softmax.
    Standard,
    /// Argmax per slot (lowest index wins ties).
    Greedy,
}

/// Checkpoint: the flat parameter vector plus a shape manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layout: Vec<LayoutEntry>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

fn layout() -> Vec<LayoutEntry> {
    vec![
        LayoutEntry { name: "embeddings".into(), offset: 0, len: EMB_LEN },
        LayoutEntry { name: "slot_output_maps".into(), offset: U_BASE, len: U_LEN },
        LayoutEntry { name: "verifier_w".into(), offset: W_BASE, len: W_LEN },
        LayoutEntry { name: "verifier_bias".into(), offset: BV_INDEX, len: 1 },
    ]
}

/// Shared generator/verifier parameters as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    values: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros() -> Self {
        PolicyParams { values: vec![0.0; PARAM_COUNT] }
    }

    /// Seeded init: zero-mean normal entries at scale 0.1, zero verifier
    /// bias.
    pub fn init(seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[TAG_INIT]);
        let mut values: Vec<f64> = (0..PARAM_COUNT)
            .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        values[BV_INDEX] = 0.0;
        PolicyParams { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        assert_eq!(values.len(), PARAM_COUNT);
        PolicyParams { values }
    }

    fn emb(&self, token: usize) -> &[f64] {
        &self.values[token * EMB_DIM..(token + 1) * EMB_DIM]
    }

    fn u_row(&self, slot: usize, value: usize) -> &[f64] {
        let row = SLOT_OFFSETS[slot] + value;
        &self.values[U_BASE + row * EMB_DIM..U_BASE + (row + 1) * EMB_DIM]
    }

    fn slot_value_token(slot: usize, value: usize) -> usize {
        PROMPT_TOKENS + SLOT_OFFSETS[slot] + value
    }

    fn kind_token(kind: usize) -> usize {
        PROMPT_TOKENS + SLOT_VALUE_TOKENS + kind
    }

    /// Mean of the present prompt-feature rows.
    pub fn prompt_embedding(&self, prompt: &PromptFeatures) -> [f64; EMB_DIM] {
        let mut h = [0.0; EMB_DIM];
        for &t in &prompt.tokens {
            for (hj, ej) in h.iter_mut().zip(self.emb(t)) {
                *hj += ej;
            }
        }
        let n = prompt.tokens.len().max(1) as f64;
        for hj in &mut h {
            *hj /= n;
        }
        h
    }

    fn slot_logits(&self, slot: usize, h: &[f64; EMB_DIM]) -> Vec<f64> {
        (0..SLOT_CARDS[slot])
            .map(|v| self.u_row(slot, v).iter().zip(h).map(|(u, x)| u * x).sum())
            .collect()
    }

    /// Per-slot softmax probabilities given a prompt.
    pub fn slot_distributions(&self, prompt: &PromptFeatures) -> Vec<Vec<f64>> {
        let h = self.prompt_embedding(prompt);
        (0..SLOT_COUNT)
            .map(|m| softmax(&self.slot_logits(m, &h)))
            .collect()
    }

    /// Sample a response; the log-probability is exact.
    pub fn sample_response(
        &self,
        prompt: &PromptFeatures,
        sampling: Sampling,
        rng: &mut impl Rng,
    ) -> ResponseSample {
        let h = self.prompt_embedding(prompt);
        let mut idx = [0usize; SLOT_COUNT];
        let mut log_prob = 0.0;
        for m in 0..SLOT_COUNT {
            let logits = self.slot_logits(m, &h);
            let logp = log_softmax(&logits);
            let v = match sampling {
                Sampling::Greedy => argmax(&logits),
                Sampling::Standard => {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut chosen = logits.len() - 1;
                    for (v, lp) in logp.iter().enumerate() {
                        acc += lp.exp();
                        if u < acc {
                            chosen = v;
                            break;
                        }
                    }
                    chosen
                }
            };
            idx[m] = v;
            log_prob += logp[v];
        }
        let slots = SlotAssignment::from_indices(idx);
        ResponseSample { slots, log_prob, text: slots.render() }
    }

    /// Exact log pi(y | x).
    pub fn log_prob(&self, prompt: &PromptFeatures, slots: &SlotAssignment) -> f64 {
        let h = self.prompt_embedding(prompt);
        let idx = slots.to_indices();
        (0..SLOT_COUNT)
            .map(|m| log_softmax(&self.slot_logits(m, &h))[idx[m]])
            .sum()
    }

    /// Accumulate `coef * d log pi / d theta` into `out`.
    pub fn add_log_prob_grad(
        &self,
        prompt: &PromptFeatures,
        slots: &SlotAssignment,
        coef: f64,
        out: &mut [f64],
    ) {
        assert_eq!(out.len(), PARAM_COUNT);
        let h = self.prompt_embedding(prompt);
        let idx = slots.to_indices();
        let mut dh = [0.0; EMB_DIM];
        for m in 0..SLOT_COUNT {
            let probs = softmax(&self.slot_logits(m, &h));
            for v in 0..SLOT_CARDS[m] {
                let delta = (v == idx[m]) as u8 as f64 - probs[v];
                let row = U_BASE + (SLOT_OFFSETS[m] + v) * EMB_DIM;
                for j in 0..EMB_DIM {
                    out[row + j] += coef * delta * h[j];
                    dh[j] += delta * self.u_row(m, v)[j];
                }
            }
        }
        let n = prompt.tokens.len().max(1) as f64;
        for &t in &prompt.tokens {
            let row = t * EMB_DIM;
            for j in 0..EMB_DIM {
                out[row + j] += coef * dh[j] / n;
            }
        }
    }

    /// Materialized score function `d log pi / d theta`.
    pub fn grad_log_prob(&self, prompt: &PromptFeatures, slots: &SlotAssignment) -> Vec<f64> {
        let mut g = vec![0.0; PARAM_COUNT];
        self.add_log_prob_grad(prompt, slots, 1.0, &mut g);
        g
    }

    fn kind_rows(kind: &ItemKindToken) -> Vec<usize> {
        match kind {
            ItemKindToken::Kinds(kinds) => kinds.iter().map(|&k| Self::kind_token(k)).collect(),
            ItemKindToken::Spurious => vec![Self::kind_token(KIND_SPURIOUS)],
        }
    }

    /// Verifier head logit: `w . [h_prompt; mean slot rows; kind row] + b`.
    pub fn verifier_logit(&self, query: &VerifierQuery) -> f64 {
        let h = self.prompt_embedding(&query.prompt);
        let idx = query.slots.to_indices();
        let w = &self.values[W_BASE..W_BASE + W_LEN];
        let mut logit = self.values[BV_INDEX];
        for j in 0..EMB_DIM {
            logit += w[j] * h[j];
        }
        for m in 0..SLOT_COUNT {
            let row = self.emb(Self::slot_value_token(m, idx[m]));
            for j in 0..EMB_DIM {
                logit += w[EMB_DIM + j] * row[j] / SLOT_COUNT as f64;
            }
        }
        let kind_rows = Self::kind_rows(&query.kind);
        for &t in &kind_rows {
            let row = self.emb(t);
            for j in 0..EMB_DIM {
                logit += w[2 * EMB_DIM + j] * row[j] / kind_rows.len() as f64;
            }
        }
        logit
    }

    /// Yes-probability of the verification head, in (0, 1).
    pub fn verifier_yes_prob(&self, query: &VerifierQuery) -> f64 {
        logistic(self.verifier_logit(query))
    }

    /// Accumulate `coef * d logit / d theta` into `out`.
    pub fn add_verifier_logit_grad(&self, query: &VerifierQuery, coef: f64, out: &mut [f64]) {
        assert_eq!(out.len(), PARAM_COUNT);
        let h = self.prompt_embedding(&query.prompt);
        let idx = query.slots.to_indices();
        let w = &self.values[W_BASE..W_BASE + W_LEN];
        out[BV_INDEX] += coef;
        // d/dw blocks.
        for j in 0..EMB_DIM {
            out[W_BASE + j] += coef * h[j];
        }
        for m in 0..SLOT_COUNT {
            let row = self.emb(Self::slot_value_token(m, idx[m]));
            for j in 0..EMB_DIM {
                out[W_BASE + EMB_DIM + j] += coef * row[j] / SLOT_COUNT as f64;
            }
        }
        let kind_rows = Self::kind_rows(&query.kind);
        for &t in &kind_rows {
            let row = self.emb(t);
            for j in 0..EMB_DIM {
                out[W_BASE + 2 * EMB_DIM + j] += coef * row[j] / kind_rows.len() as f64;
            }
        }
        // d/dE blocks.
        let n = query.prompt.tokens.len().max(1) as f64;
        for &t in &query.prompt.tokens {
            for j in 0..EMB_DIM {
                out[t * EMB_DIM + j] += coef * w[j] / n;
            }
        }
        for m in 0..SLOT_COUNT {
            let t = Self::slot_value_token(m, idx[m]);
            for j in 0..EMB_DIM {
                out[t * EMB_DIM + j] += coef * w[EMB_DIM + j] / SLOT_COUNT as f64;
            }
        }
        for &t in &kind_rows {
            for j in 0..EMB_DIM {
                out[t * EMB_DIM + j] += coef * w[2 * EMB_DIM + j] / kind_rows.len() as f64;
            }
        }
    }

    /// Materialized gradient of the yes-probability.
    pub fn verifier_yes_prob_grad(&self, query: &VerifierQuery) -> Vec<f64> {
        let r = self.verifier_yes_prob(query);
        let mut g = vec![0.0; PARAM_COUNT];
        self.add_verifier_logit_grad(query, r * (1.0 - r), &mut g);
        g
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint { layout: layout(), values: self.values.clone() }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, String> {
        if ckpt.layout != layout() {
            return Err("checkpoint layout does not match this model".into());
        }
        if ckpt.values.len() != PARAM_COUNT {
            return Err(format!(
                "checkpoint holds {} values, expected {PARAM_COUNT}",
                ckpt.values.len()
            ));
        }
        Ok(PolicyParams { values: ckpt.values.clone() })
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let lz = m + z.ln();
    logits.iter().map(|l| l - lz).collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd;
    use crate::rng::stream;

    fn demo_prompt() -> (ConstraintSpec, PromptFeatures) {
        let spec = ConstraintSpec::new(
            "spec-t",
            vec![
                Constraint::ItemCount { n: 3 },
                Constraint::IncludeKeyword { word: "paris".into() },
                Constraint::EndsWith { phrase: "Happy Reading!".into() },
            ],
            0,
        )
        .unwrap();
        let prompt = PromptFeatures::of(&spec);
        (spec, prompt)
    }

    fn demo_query(params_seed: u64) -> (PolicyParams, VerifierQuery) {
        let (spec, prompt) = demo_prompt();
        let params = PolicyParams::init(params_seed);
        let checklist = crate::checklist::derive_checklist(&spec);
        let query = VerifierQuery {
            prompt,
            slots: SlotAssignment::from_indices([2, 1, 0, 0, 1, 3, 0, 1]),
            kind: item_kind_token(&spec, &checklist.items[1]),
        };
        (params, query)
    }

    #[test]
    fn zero_params_sample_uniformly() {
        let (_, prompt) = demo_prompt();
        let params = PolicyParams::zeros();
        let mut rng = stream(1, &[100]);
        let sample = params.sample_response(&prompt, Sampling::Standard, &mut rng);
        let expect = -(SlotAssignment::grid_size() as f64).ln();
        assert!((sample.log_prob - expect).abs() < 1e-12);
        for dist in params.slot_distributions(&prompt) {
            for p in &dist {
                assert!((p - dist[0]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn slot_distributions_sum_to_one() {
        let (_, prompt) = demo_prompt();
        let params = PolicyParams::init(3);
        for dist in params.slot_distributions(&prompt) {
            let total: f64 = dist.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn greedy_sampling_is_deterministic_and_maximal() {
        let (_, prompt) = demo_prompt();
        let params = PolicyParams::init(4);
        let mut rng_a = stream(1, &[101]);
        let mut rng_b = stream(2, &[202]);
        let a = params.sample_response(&prompt, Sampling::Greedy, &mut rng_a);
        let b = params.sample_response(&prompt, Sampling::Greedy, &mut rng_b);
        assert_eq!(a, b);
        for slots in SlotAssignment::enumerate_all() {
            assert!(params.log_prob(&prompt, &slots) <= a.log_prob + 1e-12);
        }
    }

    #[test]
    fn fixed_seed_reproduces_the_sample() {
        let (_, prompt) = demo_prompt();
        let params = PolicyParams::init(5);
        let a = params.sample_response(&prompt, Sampling::Standard, &mut stream(9, &[7]));
        let b = params.sample_response(&prompt, Sampling::Standard, &mut stream(9, &[7]));
        assert_eq!(a, b);
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let (_, prompt) = demo_prompt();
        let params = PolicyParams::init(6);
        let slots = SlotAssignment::from_indices([2, 1, 0, 1, 0, 2, 1, 1]);
        let analytic = params.grad_log_prob(&prompt, &slots);
        let numeric = fd::central_grad(
            |v| PolicyParams::from_values(v.to_vec()).log_prob(&prompt, &slots),
            params.values(),
            1e-5,
        );
        assert!(fd::max_rel_diff(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn score_function_sums_to_zero_over_the_response_space() {
        let (_, prompt) = demo_prompt();
        let params = PolicyParams::init(7);
        let mut acc = vec![0.0; PARAM_COUNT];
        for slots in SlotAssignment::enumerate_all() {
            let pi = params.log_prob(&prompt, &slots).exp();
            params.add_log_prob_grad(&prompt, &slots, pi, &mut acc);
        }
        let max = acc.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(max < 1e-10, "E[score] should vanish, got max {max}");
    }

    #[test]
    fn unused_parameters_have_zero_score_entries() {
        let (_, prompt) = demo_prompt();
        let params = PolicyParams::init(8);
        let slots = SlotAssignment::from_indices([0, 0, 0, 0, 0, 0, 0, 0]);
        let g = params.grad_log_prob(&prompt, &slots);
        // Verifier head weights and slot-value/kind embeddings never feed
        // the generator.
        for &x in &g[W_BASE..] {
            assert_eq!(x, 0.0);
        }
        for t in PROMPT_TOKENS..PROMPT_TOKENS + SLOT_VALUE_TOKENS + KIND_TOKENS {
            for j in 0..EMB_DIM {
                assert_eq!(g[t * EMB_DIM + j], 0.0);
            }
        }
        // Absent prompt tokens stay zero as well.
        for t in 0..PROMPT_TOKENS {
            if !prompt.tokens.contains(&t) {
                for j in 0..EMB_DIM {
                    assert_eq!(g[t * EMB_DIM + j], 0.0);
                }
            }
        }
    }

    #[test]
    fn blank_verifier_head_answers_half() {
        let (_, query) = demo_query(9);
        let mut params = PolicyParams::init(9);
        for v in &mut params.values_mut()[W_BASE..] {
            *v = 0.0;
        }
        assert_eq!(params.verifier_yes_prob(&query), 0.5);
    }

    #[test]
    fn large_bias_drives_probability_to_one() {
        let (mut params, query) = demo_query(10);
        params.values_mut()[BV_INDEX] = 40.0;
        assert!(params.verifier_yes_prob(&query) > 1.0 - 1e-12);
        params.values_mut()[BV_INDEX] = -40.0;
        assert!(params.verifier_yes_prob(&query) < 1e-12);
    }

    #[test]
    fn verifier_gradient_matches_finite_differences() {
        let (params, query) = demo_query(11);
        let analytic = params.verifier_yes_prob_grad(&query);
        let numeric = fd::central_grad(
            |v| PolicyParams::from_values(v.to_vec()).verifier_yes_prob(&query),
            params.values(),
            1e-5,
        );
        assert!(fd::max_rel_diff(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn spurious_and_merged_kinds_embed() {
        let (spec, prompt) = demo_prompt();
        let params = PolicyParams::init(12);
        let spurious = VerifierQuery {
            prompt: prompt.clone(),
            slots: SlotAssignment::from_indices([0; 8]),
            kind: ItemKindToken::Spurious,
        };
        let merged = VerifierQuery {
            prompt,
            slots: SlotAssignment::from_indices([0; 8]),
            kind: ItemKindToken::Kinds(vec![
                constraint_kind_index(&spec.constraints[0]),
                constraint_kind_index(&spec.constraints[1]),
            ]),
        };
        let a = params.verifier_yes_prob(&spurious);
        let b = params.verifier_yes_prob(&merged);
        assert!(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0);
        assert_ne!(a, b);
    }

    #[test]
    fn generation_and_verification_share_parameters() {
        let (params, query) = demo_query(13);
        let (_, prompt) = demo_prompt();
        let slots = query.slots;
        let g_gen = params.grad_log_prob(&prompt, &slots);
        let g_ver = params.verifier_yes_prob_grad(&query);
        let coupled = (0..EMB_LEN).any(|i| g_gen[i] != 0.0 && g_ver[i] != 0.0);
        assert!(coupled, "expected a shared embedding coordinate with both gradients nonzero");
    }

    #[test]
    fn checkpoint_round_trips_byte_exact() {
        let params = PolicyParams::init(14);
        let json = serde_json::to_string(&params.to_checkpoint()).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let restored = PolicyParams::from_checkpoint(&back).unwrap();
        for (a, b) in params.values().iter().zip(restored.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
