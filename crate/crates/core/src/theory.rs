//! Executable estimator theory.
//!
//! Closed-form conditional bias, variance, and MSE of the single-verifier
//! and checklist policy-gradient estimators, the sufficient conditions for
//! checklist MSE improvement, and the checklist-size thresholds, each with
//! a Monte Carlo counterpart so every formula is checked against sampling
//! rather than trusted.
//!
//! Conventions, per response (conditioning on one `(x, y)`):
//!
//! - `S*` is strict success, `Δ*` the relaxation gap, `Y*` the item bits;
//! - the holistic judgment has mean `μ_single = (1-q) + α S*`,
//!   each item vote mean `μ_k = (1-q') + α' Y_k*`;
//! - bias/variance/MSE coefficients are per unit `‖s_θ‖²`.

use serde::Serialize;
use thiserror::Error;

use crate::rng::{self, TAG_GRID, TAG_MC};
use crate::scalar::Real;
use crate::verifier::{CorrelationModel, NoiseParams};
use crate::Scalar;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("no closed form under correlated errors; use the Monte Carlo path")]
    CorrelatedFormUnavailable,
    #[error("invalid theory point: {0}")]
    InvalidPoint(String),
}

/// One point of the analysis: verifier rates, checklist size, and the
/// response's ground-truth profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryPoint<F: Real = Scalar> {
    pub params: NoiseParams<F>,
    pub k: usize,
    pub s_star: bool,
    ones: usize,
    y_star: Option<Vec<bool>>,
}

impl<F: Real> TheoryPoint<F> {
    /// Point with `ones` passing items out of `k`. Strict success forces
    /// `ones == k`.
    pub fn new(
        params: NoiseParams<F>,
        k: usize,
        s_star: bool,
        ones: usize,
    ) -> Result<Self, TheoryError> {
        params.validate().map_err(TheoryError::InvalidPoint)?;
        if k == 0 {
            return Err(TheoryError::InvalidPoint("k must be >= 1".into()));
        }
        if s_star != (ones == k) {
            return Err(TheoryError::InvalidPoint(format!(
                "s_star = {s_star} inconsistent with {ones}/{k} passing items"
            )));
        }
        Ok(TheoryPoint { params, k, s_star, ones, y_star: None })
    }

    /// Point with an explicit item-bit vector.
    pub fn with_y(params: NoiseParams<F>, y: Vec<bool>) -> Result<Self, TheoryError> {
        let k = y.len();
        let ones = y.iter().filter(|&&b| b).count();
        let mut point = Self::new(params, k, ones == k, ones)?;
        point.y_star = Some(y);
        Ok(point)
    }

    pub fn ones(&self) -> usize {
        self.ones
    }

    /// Item bits: the explicit vector when given, otherwise `ones` leading
    /// passes. Every formula below depends on the bits only through their
    /// counts.
    pub fn y(&self) -> Vec<bool> {
        self.y_star
            .clone()
            .unwrap_or_else(|| (0..self.k).map(|i| i < self.ones).collect())
    }

    /// Partial-credit target, `ones / k`.
    pub fn s_bar(&self) -> F {
        F::of_usize(self.ones) / F::of_usize(self.k)
    }

    /// Relaxation gap.
    pub fn delta_star(&self) -> F {
        let s = if self.s_star { F::one() } else { F::zero() };
        self.s_bar() - s
    }

    fn s(&self) -> F {
        if self.s_star {
            F::one()
        } else {
            F::zero()
        }
    }

    /// Mean holistic judgment.
    pub fn mu_single(&self) -> F {
        self.params.holistic_mean(self.s_star)
    }

    /// Mean item vote for bit `y`.
    pub fn mu_item(&self, y: bool) -> F {
        self.params.item_mean(Some(y))
    }

    /// Mean of the averaged checklist judgment: `(1-q') + α' S̄*`.
    pub fn mu_bar(&self) -> F {
        F::one() - self.params.q_item + self.params.alpha_item() * self.s_bar()
    }
}

/// Conditional bias coefficients of both estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasCoefficients<F: Real = Scalar> {
    pub single: F,
    pub checklist: F,
}

/// `bias_single = (1-q) + (α-1) S*`,
/// `bias_chk = (1-q') + α' Δ* + (α'-1) S*`.
pub fn analytic_bias<F: Real>(point: &TheoryPoint<F>) -> BiasCoefficients<F> {
    let p = &point.params;
    let single = F::one() - p.q + (p.alpha() - F::one()) * point.s();
    let checklist = F::one() - p.q_item
        + p.alpha_item() * point.delta_star()
        + (p.alpha_item() - F::one()) * point.s();
    BiasCoefficients { single, checklist }
}

/// Conditional variances and the `1/(4K)` bound status.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceReport<F: Real = Scalar> {
    pub single: F,
    pub checklist: F,
    pub bound: F,
    pub within_bound: bool,
}

/// Closed-form variances under conditional independence.
pub fn analytic_variance<F: Real>(
    point: &TheoryPoint<F>,
    correlation: &CorrelationModel,
) -> Result<VarianceReport<F>, TheoryError> {
    if correlation.lenient_prob != 0.0 {
        return Err(TheoryError::CorrelatedFormUnavailable);
    }
    let mu_s = point.mu_single();
    let single = mu_s * (F::one() - mu_s);
    let mut sum = F::zero();
    for y in point.y() {
        let mu = point.mu_item(y);
        sum = sum + mu * (F::one() - mu);
    }
    let kf = F::of_usize(point.k);
    let checklist = sum / (kf * kf);
    let bound = F::one() / (F::of_usize(4) * kf);
    Ok(VarianceReport { single, checklist, bound, within_bound: checklist <= bound })
}

/// Averaged-judgment variance under the lenient-mode mixture:
/// `(1-λ) Var_ind + λ (1-λ) (1 - μ̄)²`. Used to validate the Monte Carlo
/// path; the independence case is `λ = 0`.
pub fn lenient_mixture_variance<F: Real>(point: &TheoryPoint<F>, lenient_prob: F) -> F {
    let ind = analytic_variance(point, &CorrelationModel::default())
        .expect("independence closed form")
        .checklist;
    let lam = lenient_prob;
    let miss = F::one() - point.mu_bar();
    (F::one() - lam) * ind + lam * (F::one() - lam) * miss * miss
}

/// Conditional MSEs (bias squared plus variance), per unit `‖s_θ‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MseReport<F: Real = Scalar> {
    pub single: F,
    pub checklist: F,
}

pub fn mse<F: Real>(
    point: &TheoryPoint<F>,
    correlation: &CorrelationModel,
) -> Result<MseReport<F>, TheoryError> {
    let bias = analytic_bias(point);
    let var = analytic_variance(point, correlation)?;
    Ok(MseReport {
        single: bias.single * bias.single + var.single,
        checklist: bias.checklist * bias.checklist + var.checklist,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Correct,
    Incorrect,
}

/// Verdict of the sufficient condition for checklist MSE improvement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionVerdict<F: Real = Scalar> {
    pub holds: bool,
    pub branch: Branch,
    /// Condition slack; nonnegative iff the condition holds.
    pub margin: F,
}

/// On correct outputs the condition is `p' >= p`; on incorrect outputs it
/// is `(1 - q' + α' Δ*)² + 1/(4K) <= 1 - q`.
pub fn improvement_condition<F: Real>(point: &TheoryPoint<F>) -> ConditionVerdict<F> {
    let p = &point.params;
    if point.s_star {
        let margin = p.p_item - p.p;
        ConditionVerdict { holds: margin >= F::zero(), branch: Branch::Correct, margin }
    } else {
        let a = F::one() - p.q_item + p.alpha_item() * point.delta_star();
        let lhs = a * a + F::one() / (F::of_usize(4) * F::of_usize(point.k));
        let margin = (F::one() - p.q) - lhs;
        ConditionVerdict { holds: margin >= F::zero(), branch: Branch::Incorrect, margin }
    }
}

/// Checklist-size thresholds and the no-finite-K flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KThresholds {
    /// Smallest K that guarantees improvement on correct outputs, when
    /// `(1-p')² < 1-p`.
    pub threshold_correct: Option<u64>,
    /// Smallest K of the incorrect-output bound, when
    /// `A = 1-q'+α'Δ* <= 1-q` and `A(1-A) > 0`.
    pub threshold_incorrect: Option<u64>,
    /// K above which the bias-side condition alone implies the MSE
    /// condition: `1/(4(1-q)q)`.
    pub a_implies_b_threshold: Option<u64>,
    /// True when the point's branch violates the bias-side necessary
    /// condition, so no finite K can help.
    pub impossible: bool,
}

fn ceil_at_least_one(x: f64) -> u64 {
    (x.ceil().max(1.0)) as u64
}

pub fn k_thresholds<F: Real>(point: &TheoryPoint<F>) -> KThresholds {
    let pars = &point.params;
    let p = pars.p.to_f64().unwrap();
    let q = pars.q.to_f64().unwrap();
    let p_i = pars.p_item.to_f64().unwrap();
    let q_i = pars.q_item.to_f64().unwrap();
    let alpha_i = pars.alpha_item().to_f64().unwrap();
    let delta = point.delta_star().to_f64().unwrap();

    let threshold_correct = {
        let gap = (1.0 - p) - (1.0 - p_i) * (1.0 - p_i);
        (gap > 0.0).then(|| ceil_at_least_one(p_i * (1.0 - p_i) / gap))
    };
    let a = 1.0 - q_i + alpha_i * delta;
    let threshold_incorrect =
        (a <= 1.0 - q && a * (1.0 - a) > 0.0).then(|| ceil_at_least_one(1.0 / (4.0 * a * (1.0 - a))));
    let a_implies_b_threshold =
        ((1.0 - q) * q > 0.0).then(|| ceil_at_least_one(1.0 / (4.0 * (1.0 - q) * q)));
    let impossible = if point.s_star {
        (1.0 - p_i) * (1.0 - p_i) > 1.0 - p
    } else {
        a * a > 1.0 - q
    };
    KThresholds { threshold_correct, threshold_incorrect, a_implies_b_threshold, impossible }
}

/// Closed-form checklist MSE as a function of K with the point's other
/// coordinates held fixed (the relaxation gap scales with the new K as
/// `ones/K`; strict points keep all items passing).
pub fn mse_checklist_at_k<F: Real>(point: &TheoryPoint<F>, k: usize) -> F {
    let ones = if point.s_star {
        k
    } else {
        // Keep the failing profile: rescale the passing fraction.
        ((point.s_bar().to_f64().unwrap() * k as f64).round() as usize).min(k.saturating_sub(1))
    };
    let scaled = TheoryPoint::new(point.params, k, point.s_star, ones).expect("rescaled point");
    let report = mse(&scaled, &CorrelationModel::default()).expect("independence");
    report.checklist
}

// ---------------------------------------------------------------------------
// Monte Carlo counterparts
// ---------------------------------------------------------------------------

/// Streaming moments of a bounded scalar sample.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McMoments {
    pub n: u64,
    pub mean: f64,
    pub var: f64,
    /// Standard error of the mean.
    pub se_mean: f64,
    /// Asymptotic standard error of the variance estimate.
    pub se_var: f64,
}

struct Accumulator {
    n: u64,
    s1: f64,
    s2: f64,
    s3: f64,
    s4: f64,
}

impl Accumulator {
    fn new() -> Self {
        Accumulator { n: 0, s1: 0.0, s2: 0.0, s3: 0.0, s4: 0.0 }
    }

    fn push(&mut self, x: f64) {
        self.n += 1;
        self.s1 += x;
        self.s2 += x * x;
        self.s3 += x * x * x;
        self.s4 += x * x * x * x;
    }

    fn moments(&self) -> McMoments {
        let n = self.n as f64;
        let m = self.s1 / n;
        let var = (self.s2 / n - m * m).max(0.0);
        // Central fourth moment from raw moments (stable for samples in [0, 1]).
        let m4 = self.s4 / n - 4.0 * m * self.s3 / n + 6.0 * m * m * self.s2 / n - 3.0 * m.powi(4);
        let se_var = ((m4 - var * var).max(0.0) / n).sqrt();
        McMoments { n: self.n, mean: m, var, se_mean: (var / n).sqrt(), se_var }
    }
}

/// Sample one averaged checklist judgment.
fn draw_jbar(point: &TheoryPoint, lenient_prob: f64, rng: &mut impl Rng) -> f64 {
    if lenient_prob > 0.0 && rng.gen::<f64>() < lenient_prob {
        return 1.0;
    }
    let pass = point.mu_item(true);
    let fail = point.mu_item(false);
    let ones = point.ones as u64;
    let zeros = (point.k - point.ones) as u64;
    let mut yes = 0u64;
    if ones > 0 {
        yes += Binomial::new(ones, pass.clamp(0.0, 1.0)).unwrap().sample(rng);
    }
    if zeros > 0 {
        yes += Binomial::new(zeros, fail.clamp(0.0, 1.0)).unwrap().sample(rng);
    }
    yes as f64 / point.k as f64
}

/// Monte Carlo moments of the averaged checklist judgment.
pub fn mc_jbar_moments(
    point: &TheoryPoint,
    correlation: &CorrelationModel,
    trials: u64,
    seed: u64,
) -> McMoments {
    let mut rng = rng::stream(seed, &[TAG_MC, 1]);
    let mut acc = Accumulator::new();
    for _ in 0..trials {
        acc.push(draw_jbar(point, correlation.lenient_prob, &mut rng));
    }
    acc.moments()
}

/// Monte Carlo moments of the holistic judgment.
pub fn mc_holistic_moments(point: &TheoryPoint, trials: u64, seed: u64) -> McMoments {
    let mu = point.mu_single();
    let mut rng = rng::stream(seed, &[TAG_MC, 2]);
    let mut acc = Accumulator::new();
    for _ in 0..trials {
        acc.push((rng.gen::<f64>() < mu) as u8 as f64);
    }
    acc.moments()
}

/// Paired Monte Carlo gradient MSEs (per unit `‖s_θ‖²`).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McMse {
    pub n: u64,
    pub mse_single: f64,
    pub se_single: f64,
    pub mse_checklist: f64,
    pub se_checklist: f64,
    /// Mean and standard error of `e_chk - e_single` over paired trials.
    pub diff: f64,
    pub se_diff: f64,
}

pub fn mc_mse_pair(
    point: &TheoryPoint,
    correlation: &CorrelationModel,
    trials: u64,
    seed: u64,
) -> McMse {
    let mu_single = point.mu_single();
    let s = point.s();
    let mut rng = rng::stream(seed, &[TAG_MC, 3]);
    let (mut acc_s, mut acc_c, mut acc_d) = (Accumulator::new(), Accumulator::new(), Accumulator::new());
    for _ in 0..trials {
        let j = (rng.gen::<f64>() < mu_single) as u8 as f64;
        let jbar = draw_jbar(point, correlation.lenient_prob, &mut rng);
        let e_single = (j - s) * (j - s);
        let e_chk = (jbar - s) * (jbar - s);
        acc_s.push(e_single);
        acc_c.push(e_chk);
        acc_d.push(e_chk - e_single);
    }
    let (ms, mc, md) = (acc_s.moments(), acc_c.moments(), acc_d.moments());
    McMse {
        n: trials,
        mse_single: ms.mean,
        se_single: ms.se_mean,
        mse_checklist: mc.mean,
        se_checklist: mc.se_mean,
        diff: md.mean,
        se_diff: md.se_mean,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineChoice {
    Zero,
    StrictTarget,
}

/// One realization of the three gradient estimators.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorSample {
    pub g_star: Vec<f64>,
    pub g_single: Vec<f64>,
    pub g_chk: Vec<f64>,
    pub baseline: f64,
    pub s_theta: Vec<f64>,
}

/// Draw one estimator sample at a fixed score vector.
pub fn draw_estimator_sample(
    point: &TheoryPoint,
    correlation: &CorrelationModel,
    baseline: BaselineChoice,
    s_theta: &[f64],
    seed: u64,
    trial: u64,
) -> EstimatorSample {
    let mut rng = rng::stream(seed, &[TAG_MC, 4, trial]);
    let b = match baseline {
        BaselineChoice::Zero => 0.0,
        BaselineChoice::StrictTarget => point.s(),
    };
    let j = (rng.gen::<f64>() < point.mu_single()) as u8 as f64;
    let jbar = draw_jbar(point, correlation.lenient_prob, &mut rng);
    let scale = |c: f64| s_theta.iter().map(|x| c * x).collect::<Vec<f64>>();
    EstimatorSample {
        g_star: scale(point.s() - b),
        g_single: scale(j - b),
        g_chk: scale(jbar - b),
        baseline: b,
        s_theta: s_theta.to_vec(),
    }
}

/// Monte Carlo gradient MSE report against the closed forms.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GradMseReport {
    pub mc: McMse,
    pub s_norm_sq: f64,
    /// Closed-form MSEs scaled by `‖s_θ‖²`; present under independence.
    pub closed_single: Option<f64>,
    pub closed_checklist: Option<f64>,
    pub within_4_sigma: bool,
}

/// Estimate `E‖g - g*‖²` for both estimators at a fixed score vector and
/// compare against the closed forms (within four standard errors) when the
/// independence form exists.
pub fn monte_carlo_gradient_mse(
    point: &TheoryPoint,
    correlation: &CorrelationModel,
    s_theta: &[f64],
    trials: u64,
    seed: u64,
) -> GradMseReport {
    let s_norm_sq: f64 = s_theta.iter().map(|x| x * x).sum();
    let mut mc = mc_mse_pair(point, correlation, trials, seed);
    mc.mse_single *= s_norm_sq;
    mc.se_single *= s_norm_sq;
    mc.mse_checklist *= s_norm_sq;
    mc.se_checklist *= s_norm_sq;
    mc.diff *= s_norm_sq;
    mc.se_diff *= s_norm_sq;
    let closed = mse(point, correlation).ok();
    let (closed_single, closed_checklist, within) = match closed {
        Some(ms) => {
            let cs = ms.single * s_norm_sq;
            let cc = ms.checklist * s_norm_sq;
            let ok = (mc.mse_single - cs).abs() <= 4.0 * mc.se_single.max(1e-12)
                && (mc.mse_checklist - cc).abs() <= 4.0 * mc.se_checklist.max(1e-12);
            (Some(cs), Some(cc), ok)
        }
        None => (None, None, true),
    };
    GradMseReport { mc, s_norm_sq, closed_single, closed_checklist, within_4_sigma: within }
}

// ---------------------------------------------------------------------------
// Test grids
// ---------------------------------------------------------------------------

/// Random analysis points: rates in [0.5, 1], K in {1, 2, 4, 8, 16},
/// both strict and failing profiles with every feasible gap.
pub fn random_grid(n: usize, seed: u64) -> Vec<TheoryPoint> {
    let mut rng = rng::stream(seed, &[TAG_GRID]);
    let ks = [1usize, 2, 4, 8, 16];
    (0..n)
        .map(|_| {
            let params = NoiseParams::new(
                rng.gen_range(0.5..=1.0),
                rng.gen_range(0.5..=1.0),
                rng.gen_range(0.5..=1.0),
                rng.gen_range(0.5..=1.0),
            );
            let k = ks[rng.gen_range(0..ks.len())];
            let s_star = rng.gen_bool(0.5);
            let ones = if s_star { k } else { rng.gen_range(0..k) };
            TheoryPoint::new(params, k, s_star, ones).expect("grid point is valid")
        })
        .collect()
}
