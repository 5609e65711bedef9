//! Verifier models: oracle, parametric-noisy with optional correlated
//! errors, and the learned head shared with the generator.
//!
//! A verifier produces binary item votes `d_{ikj}`; pass rates average the
//! `J` votes per item exactly, and threshold aggregation turns a pass rate
//! into a pass label. Noisy verifiers are parameterized by true
//! positive/negative rates `(p, q)` for the holistic judgment and
//! `(p', q')` per checklist item; error correlation across items is modeled
//! as a per-response lenient event that forces every vote to Yes.

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint::ConstraintSpec;
use crate::oracle::{self, GroundTruthVector};
use crate::policy::{item_kind_token, PolicyParams, PromptFeatures, VerifierQuery};
use crate::response::SlotAssignment;
use crate::rng::{self, TAG_EVAL, TAG_HOLISTIC, TAG_LENIENT, TAG_VOTE};
use crate::scalar::Real;
use crate::checklist::Checklist;
use crate::{rat, Rat, Scalar};
use rand::Rng;

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("empty support for cell {0}; rate not estimable")]
    InsufficientSupport(&'static str),
    #[error("holistic judgment is not defined for the learned item verifier")]
    UnsupportedHolistic,
}

/// Verifier quality: holistic true positive/negative rates and their
/// item-level counterparts, all in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseParams<F: Real = Scalar> {
    pub p: F,
    pub q: F,
    pub p_item: F,
    pub q_item: F,
}

impl<F: Real> NoiseParams<F> {
    pub fn new(p: F, q: F, p_item: F, q_item: F) -> Self {
        NoiseParams { p, q, p_item, q_item }
    }

    pub fn symmetric(holistic: F, item: F) -> Self {
        NoiseParams { p: holistic, q: holistic, p_item: item, q_item: item }
    }

    pub fn perfect() -> Self {
        Self::symmetric(F::one(), F::one())
    }

    /// alpha = p + q - 1.
    pub fn alpha(&self) -> F {
        self.p + self.q - F::one()
    }

    /// alpha' = p' + q' - 1.
    pub fn alpha_item(&self) -> F {
        self.p_item + self.q_item - F::one()
    }

    /// Mean holistic judgment given strict success: (1 - q) + alpha * S*.
    pub fn holistic_mean(&self, s_star: bool) -> F {
        let s = if s_star { F::one() } else { F::zero() };
        F::one() - self.q + self.alpha() * s
    }

    /// Mean item vote given the item bit: (1 - q') + alpha' * Y*.
    /// Spurious items have no failure condition, so they count as true.
    pub fn item_mean(&self, truth: Option<bool>) -> F {
        let y = if truth.unwrap_or(true) { F::one() } else { F::zero() };
        F::one() - self.q_item + self.alpha_item() * y
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("p", self.p),
            ("q", self.q),
            ("p_item", self.p_item),
            ("q_item", self.q_item),
        ] {
            if v < F::zero() || v > F::one() {
                return Err(format!("rate {name} out of [0,1]"));
            }
        }
        Ok(())
    }
}

/// Cross-item error correlation: with probability `lenient_prob` a response
/// is judged in a lenient mode where every item vote is Yes; otherwise
/// votes are conditionally independent. Zero recovers exact independence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationModel {
    pub lenient_prob: f64,
}

impl Default for CorrelationModel {
    fn default() -> Self {
        CorrelationModel { lenient_prob: 0.0 }
    }
}

/// A verifier instance. The learned variant reads a parameter snapshot of
/// the shared model.
pub enum Verifier<'a> {
    Oracle,
    Noisy {
        params: NoiseParams,
        correlation: CorrelationModel,
    },
    Learned(&'a PolicyParams),
}

/// Everything needed to judge one `(prompt, response, checklist)` triple.
pub struct VerifierContext<'a> {
    pub spec: &'a ConstraintSpec,
    pub prompt: &'a PromptFeatures,
    pub slots: SlotAssignment,
    pub checklist: &'a Checklist,
    pub truth: &'a GroundTruthVector,
}

impl Verifier<'_> {
    /// Per-item yes probability for one response.
    pub fn item_yes_probs(&self, ctx: &VerifierContext<'_>) -> Vec<f64> {
        match self {
            Verifier::Oracle => ctx
                .truth
                .bits
                .iter()
                .map(|b| if b.unwrap_or(true) { 1.0 } else { 0.0 })
                .collect(),
            Verifier::Noisy { params, .. } => {
                ctx.truth.bits.iter().map(|b| params.item_mean(*b)).collect()
            }
            Verifier::Learned(policy) => ctx
                .checklist
                .items
                .iter()
                .map(|item| {
                    let query = VerifierQuery {
                        prompt: ctx.prompt.clone(),
                        slots: ctx.slots,
                        kind: item_kind_token(ctx.spec, item),
                    };
                    policy.verifier_yes_prob(&query)
                })
                .collect(),
        }
    }

    pub fn lenient_prob(&self) -> f64 {
        match self {
            Verifier::Noisy { correlation, .. } => correlation.lenient_prob,
            _ => 0.0,
        }
    }

    /// One binary judgment of the whole response against the whole
    /// instruction.
    pub fn holistic_judgment(
        &self,
        s_star: bool,
        key: VoteKey,
    ) -> Result<bool, VerifierError> {
        match self {
            Verifier::Oracle => Ok(s_star),
            Verifier::Noisy { params, .. } => {
                let mu = params.holistic_mean(s_star);
                let mut rng = rng::stream(key.seed, &[TAG_HOLISTIC, key.path[0], key.path[1], key.path[2]]);
                Ok(rng.gen::<f64>() < mu)
            }
            Verifier::Learned(_) => Err(VerifierError::UnsupportedHolistic),
        }
    }
}

/// Stream key for one response's votes: `(step, prompt, candidate)` in
/// training, arbitrary labels elsewhere.
#[derive(Debug, Clone, Copy)]
pub struct VoteKey {
    pub seed: u64,
    pub path: [u64; 3],
}

/// Parsed votes for one response: `K x J` bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteRow {
    pub votes: Vec<Vec<bool>>,
}

impl VoteRow {
    pub fn item_count(&self) -> usize {
        self.votes.len()
    }

    pub fn votes_per_item(&self) -> usize {
        self.votes.first().map_or(0, Vec::len)
    }
}

/// Sample `j` votes per item. Each vote has its own stream keyed by
/// `(step, candidate, item, vote)`, so fan-out order cannot change a run.
/// The lenient event is drawn once per response.
pub fn sample_item_votes(
    probs: &[f64],
    lenient_prob: f64,
    j: usize,
    key: VoteKey,
) -> VoteRow {
    assert!(j >= 1, "at least one vote per item");
    let [a, b, c] = key.path;
    let lenient = lenient_prob > 0.0 && {
        let mut rng = rng::stream(key.seed, &[TAG_LENIENT, a, b, c]);
        rng.gen::<f64>() < lenient_prob
    };
    let votes = probs
        .iter()
        .enumerate()
        .map(|(k, &prob)| {
            (0..j)
                .map(|v| {
                    if lenient {
                        true
                    } else {
                        let mut rng =
                            rng::stream(key.seed, &[TAG_VOTE, a, b, c, k as u64, v as u64]);
                        rng.gen::<f64>() < prob
                    }
                })
                .collect()
        })
        .collect();
    VoteRow { votes }
}

/// Exact per-item vote averages.
pub fn pass_rates(row: &VoteRow) -> Vec<Rat> {
    row.votes
        .iter()
        .map(|item| {
            let yes = item.iter().filter(|&&d| d).count() as i64;
            rat(yes, item.len() as i64)
        })
        .collect()
}

/// Exact ordering of a pass rate against a float threshold.
///
/// The threshold's binary expansion is compared exactly, so `p_hat = 3/4`
/// against `tau = 0.75` compares equal with no rounding slack.
pub fn rate_cmp(p_hat: Rat, tau: f64) -> std::cmp::Ordering {
    assert!(tau.is_finite() && tau > 0.0 && tau <= 1.0, "tau in (0, 1]");
    let (mantissa, exponent, sign) = Float::integer_decode(tau);
    debug_assert!(sign > 0);
    let numer = *p_hat.numer() as i128;
    let denom = *p_hat.denom() as i128;
    if exponent >= 0 {
        return numer.cmp(&(((mantissa as i128) << exponent) * denom));
    }
    let shift = (-exponent) as u32;
    if shift <= 64 && numer.unsigned_abs() < (1 << 40) && denom < (1 << 40) {
        (numer << shift).cmp(&((mantissa as i128) * denom))
    } else {
        // Out of the exact window (never hit by J <= 2^40); fall back.
        let lhs = *p_hat.numer() as f64 / *p_hat.denom() as f64;
        lhs.partial_cmp(&tau).expect("finite rates")
    }
}

/// Pass-rate reaches the threshold (inclusive).
pub fn rate_reaches(p_hat: Rat, tau: f64) -> bool {
    rate_cmp(p_hat, tau) != std::cmp::Ordering::Less
}

/// Pass-rate at or below the threshold (inclusive).
pub fn rate_at_most(p_hat: Rat, tau: f64) -> bool {
    rate_cmp(p_hat, tau) != std::cmp::Ordering::Greater
}

/// Pass labels: 1 iff the pass rate reaches `tau` (inclusive).
pub fn aggregate(p_hat: &[Rat], tau: f64) -> Vec<bool> {
    p_hat.iter().map(|&r| rate_reaches(r, tau)).collect()
}

/// Measured verifier rates on an evaluation set with known ground truth.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RateEstimate {
    pub params: NoiseParams,
    pub n_pos: u64,
    pub n_neg: u64,
    pub n_item_pos: u64,
    pub n_item_neg: u64,
}

pub struct EvalCase<'a> {
    pub spec: &'a ConstraintSpec,
    pub prompt: &'a PromptFeatures,
    pub slots: SlotAssignment,
    pub checklist: &'a Checklist,
}

/// Estimate `(p, q, p', q')` by sampling one holistic judgment and `j`
/// item votes per case and comparing against the oracle bits.
pub fn empirical_rates(
    verifier: &Verifier<'_>,
    cases: &[EvalCase<'_>],
    j: usize,
    seed: u64,
) -> Result<RateEstimate, VerifierError> {
    let mut hit = [0u64; 4]; // holistic pos hit, holistic neg hit, item pos hit, item neg hit
    let mut tot = [0u64; 4];
    for (i, case) in cases.iter().enumerate() {
        let truth = oracle::ground_truth(case.spec, case.checklist, &case.slots.render())
            .expect("eval case checklist matches its spec");
        let s_star = truth.strict();
        let key = VoteKey { seed, path: [TAG_EVAL, i as u64, 0] };
        let judgment = verifier.holistic_judgment(s_star, key)?;
        let cell = if s_star { 0 } else { 1 };
        tot[cell] += 1;
        if judgment == s_star {
            hit[cell] += 1;
        }
        let ctx = VerifierContext {
            spec: case.spec,
            prompt: case.prompt,
            slots: case.slots,
            checklist: case.checklist,
            truth: &truth,
        };
        let probs = verifier.item_yes_probs(&ctx);
        let row = sample_item_votes(&probs, verifier.lenient_prob(), j, key);
        for (k, bit) in truth.bits.iter().enumerate() {
            let Some(y) = bit else { continue };
            let cell = if *y { 2 } else { 3 };
            for &d in &row.votes[k] {
                tot[cell] += 1;
                if d == *y {
                    hit[cell] += 1;
                }
            }
        }
    }
    for (idx, name) in [(0, "p"), (1, "q"), (2, "p_item"), (3, "q_item")] {
        if tot[idx] == 0 {
            return Err(VerifierError::InsufficientSupport(name));
        }
    }
    Ok(RateEstimate {
        params: NoiseParams {
            p: hit[0] as f64 / tot[0] as f64,
            q: hit[1] as f64 / tot[1] as f64,
            p_item: hit[2] as f64 / tot[2] as f64,
            q_item: hit[3] as f64 / tot[3] as f64,
        },
        n_pos: tot[0],
        n_neg: tot[1],
        n_item_pos: tot[2],
        n_item_neg: tot[3],
    })
}

/// CSV rendering of a rate estimate, one data row.
pub fn rates_csv(est: &RateEstimate) -> String {
    let p = est.params;
    format!(
        "p,q,p_item,q_item,alpha,alpha_item,n_pos,n_neg\n{},{},{},{},{},{},{},{}\n",
        p.p,
        p.q,
        p.p_item,
        p.q_item,
        p.alpha(),
        p.alpha_item(),
        est.n_pos,
        est.n_neg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checklist::derive_checklist;
    use crate::constraint::{sample_spec, Constraint};
    use crate::oracle::ground_truth;

    fn truth(bits: &[Option<bool>]) -> GroundTruthVector {
        GroundTruthVector { bits: bits.to_vec() }
    }

    fn key(n: u64) -> VoteKey {
        VoteKey { seed: 99, path: [n, 0, 0] }
    }

    #[test]
    fn oracle_votes_equal_truth_every_trial() {
        let t = truth(&[Some(true), Some(false)]);
        let probs: Vec<f64> = t.bits.iter().map(|b| if b.unwrap() { 1.0 } else { 0.0 }).collect();
        for trial in 0..20 {
            let row = sample_item_votes(&probs, 0.0, 3, key(trial));
            assert!(row.votes[0].iter().all(|&d| d));
            assert!(row.votes[1].iter().all(|&d| !d));
        }
    }

    #[test]
    fn perfect_item_rates_reproduce_truth() {
        let params: NoiseParams = NoiseParams::perfect();
        assert_eq!(params.item_mean(Some(true)), 1.0);
        assert_eq!(params.item_mean(Some(false)), 0.0);
        // Spurious items count as satisfied.
        assert_eq!(params.item_mean(None), 1.0);
    }

    #[test]
    fn zero_specificity_is_always_yes_on_failures() {
        let params = NoiseParams::new(1.0, 1.0, 1.0, 0.0);
        assert_eq!(params.item_mean(Some(false)), 1.0);
    }

    #[test]
    fn pass_rates_are_exact() {
        let row = VoteRow { votes: vec![vec![true, false, true]] };
        assert_eq!(pass_rates(&row), vec![rat(2, 3)]);
        let ones = VoteRow { votes: vec![vec![true; 8]] };
        assert_eq!(pass_rates(&ones), vec![rat(1, 1)]);
        let zeros = VoteRow { votes: vec![vec![false; 5]] };
        assert_eq!(pass_rates(&zeros), vec![rat(0, 1)]);
    }

    #[test]
    fn aggregation_threshold_is_inclusive() {
        assert!(rate_reaches(rat(3, 4), 0.75));
        assert!(!rate_reaches(rat(2, 3), 0.75));
        assert!(rate_reaches(rat(3, 8), 0.375));
        assert!(!rate_reaches(rat(0, 1), 0.375));
        assert!(rate_reaches(rat(1, 1), 1.0));
        assert!(!rate_reaches(rat(7, 8), 1.0));
    }

    #[test]
    fn single_vote_aggregation_is_the_vote() {
        for tau in [0.1, 0.5, 0.75, 1.0] {
            assert!(rate_reaches(rat(1, 1), tau));
            assert!(!rate_reaches(rat(0, 1), tau));
        }
    }

    #[test]
    fn aggregation_is_monotone_in_tau() {
        let rates = [rat(0, 8), rat(1, 8), rat(3, 8), rat(5, 8), rat(1, 1)];
        let taus = [0.125, 0.2, 0.375, 0.5, 0.625, 0.75, 0.9, 1.0];
        for w in taus.windows(2) {
            let lo = aggregate(&rates, w[0]);
            let hi = aggregate(&rates, w[1]);
            for (l, h) in lo.iter().zip(&hi) {
                assert!(*l || !*h, "raising tau flipped a label 0 -> 1");
            }
        }
    }

    #[test]
    fn holistic_judgment_mean_matches_one_minus_q() {
        let verifier = Verifier::Noisy {
            params: NoiseParams::new(0.9, 0.7, 0.9, 0.7),
            correlation: CorrelationModel::default(),
        };
        let n = 100_000u64;
        let mut yes = 0u64;
        for i in 0..n {
            if verifier
                .holistic_judgment(false, VoteKey { seed: 5, path: [i, 0, 0] })
                .unwrap()
            {
                yes += 1;
            }
        }
        let mean = yes as f64 / n as f64;
        let mu = 0.3;
        let sigma = (mu * (1.0 - mu) / n as f64).sqrt();
        assert!((mean - mu).abs() < 3.0 * sigma, "mean {mean} vs {mu}");
    }

    #[test]
    fn table_point_sensitivity() {
        // p = 0.477 on strict successes.
        let verifier = Verifier::Noisy {
            params: NoiseParams::new(0.477, 0.662, 0.873, 0.717),
            correlation: CorrelationModel::default(),
        };
        let n = 100_000u64;
        let mut yes = 0u64;
        for i in 0..n {
            if verifier
                .holistic_judgment(true, VoteKey { seed: 6, path: [i, 0, 0] })
                .unwrap()
            {
                yes += 1;
            }
        }
        let mean = yes as f64 / n as f64;
        let sigma = (0.477f64 * (1.0 - 0.477) / n as f64).sqrt();
        assert!((mean - 0.477).abs() < 3.0 * sigma);
    }

    #[test]
    fn lenient_mode_makes_item_errors_positively_correlated() {
        // Two failing items: under independence their vote covariance is
        // zero; the lenient mixture makes it strictly positive.
        let params = NoiseParams::new(0.9, 0.8, 0.9, 0.8);
        let t = truth(&[Some(false), Some(false)]);
        let probs: Vec<f64> = t.bits.iter().map(|b| params.item_mean(*b)).collect();
        let n = 60_000u64;
        let mut sum = [0f64; 2];
        let mut prod = 0f64;
        for i in 0..n {
            let row = sample_item_votes(&probs, 0.3, 1, key(i));
            let a = row.votes[0][0] as u8 as f64;
            let b = row.votes[1][0] as u8 as f64;
            sum[0] += a;
            sum[1] += b;
            prod += a * b;
        }
        let nf = n as f64;
        let cov = prod / nf - (sum[0] / nf) * (sum[1] / nf);
        // Analytic: lambda (1 - lambda) (1 - mu)^2 = 0.3 * 0.7 * 0.64.
        let expect = 0.3 * 0.7 * (1.0 - 0.2) * (1.0 - 0.2);
        assert!((cov - expect).abs() < 0.01, "cov {cov} vs {expect}");
        assert!(cov > 0.05);
    }

    #[test]
    fn empirical_rates_recover_configured_noise() {
        let family = crate::presets::mixed_family();
        let params = NoiseParams::new(0.85, 0.75, 0.9, 0.8);
        let verifier = Verifier::Noisy { params, correlation: CorrelationModel::default() };
        let mut specs = Vec::new();
        for seed in 0..12 {
            specs.push(sample_spec(&family, seed).unwrap());
        }
        let prepared: Vec<_> = specs
            .iter()
            .map(|s| (s, PromptFeatures::of(s), derive_checklist(s)))
            .collect();
        let mut cases = Vec::new();
        for (spec, prompt, checklist) in &prepared {
            for (i, slots) in crate::response::SlotAssignment::enumerate_all().enumerate() {
                if i % 7 == 0 {
                    cases.push(EvalCase { spec, prompt, slots, checklist });
                }
            }
        }
        let est = empirical_rates(&verifier, &cases, 4, 31).unwrap();
        for (measured, configured, n) in [
            (est.params.p, 0.85, est.n_pos),
            (est.params.q, 0.75, est.n_neg),
            (est.params.p_item, 0.9, est.n_item_pos),
            (est.params.q_item, 0.8, est.n_item_neg),
        ] {
            let sigma = (configured * (1.0 - configured) / n as f64).sqrt();
            assert!(
                (measured - configured).abs() <= 3.0 * sigma + 1e-9,
                "measured {measured} vs configured {configured} (n = {n})"
            );
        }
        let csv = rates_csv(&est);
        assert!(csv.starts_with("p,q,p_item,q_item,alpha,alpha_item,n_pos,n_neg\n"));
    }

    #[test]
    fn spurious_items_inflate_soft_scores() {
        // Spurious items carry no ground truth but the verifier still
        // scores them (yes, under the oracle convention), so the soft score
        // exceeds the defined-item partial credit on imperfect responses.
        use crate::checklist::{corrupt_checklist, derive_checklist, CorruptionPlan};
        use crate::reward::soft_score;

        let spec = ConstraintSpec::new(
            "spec-sp",
            vec![Constraint::ItemCount { n: 2 }, Constraint::AllLowercase],
            0,
        )
        .unwrap();
        let plan = CorruptionPlan { spurious_prob: 1.0, ..CorruptionPlan::identity(9) };
        let checklist = corrupt_checklist(&derive_checklist(&spec), &plan);
        let prompt = PromptFeatures::of(&spec);
        // One bullet, mixed case: both defined bits are 0.
        let slots = crate::response::SlotAssignment::from_indices([0, 0, 0, 0, 0, 0, 1, 0]);
        let truth = ground_truth(&spec, &checklist, &slots.render()).unwrap();
        let stats = crate::oracle::stats_of(&truth).unwrap();
        assert_eq!(stats.partial, crate::rat(0, 1));

        let ctx = VerifierContext {
            spec: &spec,
            prompt: &prompt,
            slots,
            checklist: &checklist,
            truth: &truth,
        };
        let probs = Verifier::Oracle.item_yes_probs(&ctx);
        let row = sample_item_votes(&probs, 0.0, 1, VoteKey { seed: 1, path: [0, 0, 0] });
        let labels = aggregate(&pass_rates(&row), 1.0);
        let s = soft_score(&labels);
        assert_eq!(s, crate::rat(3, 5), "three spurious yeses over five items");
        assert!(s > stats.partial);
    }

    #[test]
    fn oracle_rates_are_perfect() {
        let spec = ConstraintSpec::new(
            "spec-o",
            vec![Constraint::ItemCount { n: 2 }, Constraint::AllLowercase],
            0,
        )
        .unwrap();
        let prompt = PromptFeatures::of(&spec);
        let checklist = derive_checklist(&spec);
        let cases: Vec<EvalCase> = crate::response::SlotAssignment::enumerate_all()
            .step_by(11)
            .map(|slots| EvalCase { spec: &spec, prompt: &prompt, slots, checklist: &checklist })
            .collect();
        let est = empirical_rates(&Verifier::Oracle, &cases, 2, 3).unwrap();
        assert_eq!(est.params.p, 1.0);
        assert_eq!(est.params.q, 1.0);
        assert_eq!(est.params.p_item, 1.0);
        assert_eq!(est.params.q_item, 1.0);
    }

    #[test]
    fn all_passing_eval_set_lacks_support_for_q() {
        let spec = ConstraintSpec::new("spec-a", vec![Constraint::AllLowercase], 0).unwrap();
        let prompt = PromptFeatures::of(&spec);
        let checklist = derive_checklist(&spec);
        let cases: Vec<EvalCase> = crate::response::SlotAssignment::enumerate_all()
            .filter(|s| {
                ground_truth(&spec, &checklist, &s.render()).unwrap().strict()
            })
            .take(10)
            .map(|slots| EvalCase { spec: &spec, prompt: &prompt, slots, checklist: &checklist })
            .collect();
        match empirical_rates(&Verifier::Oracle, &cases, 1, 3) {
            Err(VerifierError::InsufficientSupport("q")) => {}
            other => panic!("expected missing q support, got {other:?}"),
        }
    }
}
