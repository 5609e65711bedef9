//! Finite Gibbs toy model for the partition-gradient identity.
//!
//! For a fixed item-level yes-rate function `r_phi`, the KL-regularized
//! optimal generator has the Gibbs form
//! `pi*(y) ∝ pi_ref(y) exp(R_phi(y) / beta)` with
//! `R_phi(y) = (1/K) Σ_k r_phi(y, k)`. Differentiating the log-likelihood
//! of target-good responses under `pi*` yields two expectation terms: a
//! data term and a policy-sample term coming from the log-partition
//! function. Everything here is small enough to enumerate exactly, so the
//! two-term expression can be checked against finite differences of the
//! directly-computed log-likelihood.

use serde::Serialize;
use thiserror::Error;

use crate::fd;
use crate::policy::logistic;
use crate::rng::{self, TAG_GRID};
use rand::Rng;

/// Enumeration caps; anything larger loses exactness guarantees.
pub const MAX_RESPONSES: usize = 64;
pub const MAX_ITEMS: usize = 4;

#[derive(Debug, Error)]
pub enum GibbsError {
    #[error("model not enumerable: {responses} responses x {items} items exceeds {MAX_RESPONSES} x {MAX_ITEMS}")]
    NonEnumerable { responses: usize, items: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
}

/// Item-level yes-rate function, differentiable in the parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ItemModel {
    /// Rates independent of the parameters; the zero-gradient case.
    Constant { rates: Vec<f64> },
    /// `r(y, k) = logistic(w_k . f(y) + b_k)` with per-response features
    /// and phi = [w_0, b_0, w_1, b_1, ...].
    Logistic { features: Vec<Vec<f64>> },
}

/// Reference distribution, yes-rate model, and KL temperature over a
/// finite response set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GibbsToyModel {
    pub reference: Vec<f64>,
    pub item_count: usize,
    pub kl_temperature: f64,
    pub item_model: ItemModel,
}

impl GibbsToyModel {
    pub fn validate(&self) -> Result<(), GibbsError> {
        if self.reference.len() > MAX_RESPONSES || self.item_count > MAX_ITEMS {
            return Err(GibbsError::NonEnumerable {
                responses: self.reference.len(),
                items: self.item_count,
            });
        }
        if self.reference.is_empty() || self.item_count == 0 {
            return Err(GibbsError::Invalid("empty response set or checklist".into()));
        }
        let total: f64 = self.reference.iter().sum();
        if self.reference.iter().any(|&p| p <= 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(GibbsError::Invalid("reference must be a positive distribution".into()));
        }
        if self.kl_temperature <= 0.0 {
            return Err(GibbsError::Invalid("kl temperature must be positive".into()));
        }
        if let ItemModel::Constant { rates } = &self.item_model {
            if rates.len() != self.item_count || rates.iter().any(|&r| r <= 0.0 || r >= 1.0) {
                return Err(GibbsError::Invalid("constant rates must lie in (0, 1)".into()));
            }
        }
        if let ItemModel::Logistic { features } = &self.item_model {
            if features.len() != self.reference.len() {
                return Err(GibbsError::Invalid("one feature row per response".into()));
            }
            let dim = features[0].len();
            if features.iter().any(|f| f.len() != dim) {
                return Err(GibbsError::Invalid("ragged feature rows".into()));
            }
        }
        Ok(())
    }

    /// Length of the parameter vector.
    pub fn phi_len(&self) -> usize {
        match &self.item_model {
            ItemModel::Constant { .. } => 0,
            ItemModel::Logistic { features } => self.item_count * (features[0].len() + 1),
        }
    }

    /// Yes-rate of item `k` on response `y`.
    pub fn rate(&self, phi: &[f64], y: usize, k: usize) -> f64 {
        match &self.item_model {
            ItemModel::Constant { rates } => rates[k],
            ItemModel::Logistic { features } => {
                let dim = features[0].len();
                let block = &phi[k * (dim + 1)..(k + 1) * (dim + 1)];
                let logit: f64 =
                    block[..dim].iter().zip(&features[y]).map(|(w, f)| w * f).sum::<f64>()
                        + block[dim];
                logistic(logit)
            }
        }
    }

    /// Gradient of `rate(y, k)` with respect to phi, accumulated.
    fn add_rate_grad(&self, phi: &[f64], y: usize, k: usize, coef: f64, out: &mut [f64]) {
        match &self.item_model {
            ItemModel::Constant { .. } => {}
            ItemModel::Logistic { features } => {
                let dim = features[0].len();
                let r = self.rate(phi, y, k);
                let sig = coef * r * (1.0 - r);
                let base = k * (dim + 1);
                for (j, f) in features[y].iter().enumerate() {
                    out[base + j] += sig * f;
                }
                out[base + dim] += sig;
            }
        }
    }

    /// Checklist reward `R(y) = mean_k rate(y, k)`.
    pub fn reward(&self, phi: &[f64], y: usize) -> f64 {
        (0..self.item_count).map(|k| self.rate(phi, y, k)).sum::<f64>() / self.item_count as f64
    }

    /// The Gibbs-optimal generator distribution, by full enumeration.
    pub fn gibbs_policy(&self, phi: &[f64]) -> Vec<f64> {
        let weights: Vec<f64> = self
            .reference
            .iter()
            .enumerate()
            .map(|(y, &p)| p * (self.reward(phi, y) / self.kl_temperature).exp())
            .collect();
        let z: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / z).collect()
    }

    /// Mean log-likelihood of the target-good responses under the
    /// Gibbs-optimal generator.
    pub fn target_log_likelihood(&self, phi: &[f64], d_plus: &[usize]) -> f64 {
        let policy = self.gibbs_policy(phi);
        d_plus.iter().map(|&y| policy[y].ln()).sum::<f64>() / d_plus.len() as f64
    }

    /// The two-term gradient: `(1/(beta K)) Σ_k (E_{D+}[∇r] - E_{pi*}[∇r])`
    /// with both expectations exact.
    pub fn two_term_gradient(&self, phi: &[f64], d_plus: &[usize]) -> Vec<f64> {
        let mut grad = vec![0.0; self.phi_len()];
        let policy = self.gibbs_policy(phi);
        let scale = 1.0 / (self.kl_temperature * self.item_count as f64);
        for k in 0..self.item_count {
            for &y in d_plus {
                self.add_rate_grad(phi, y, k, scale / d_plus.len() as f64, &mut grad);
            }
            for (y, &pi) in policy.iter().enumerate() {
                self.add_rate_grad(phi, y, k, -scale * pi, &mut grad);
            }
        }
        grad
    }
}

/// Outcome of checking the two-term expression against the
/// finite-difference oracle on the enumerated log-likelihood.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionCheckReport {
    pub responses: usize,
    pub items: usize,
    pub kl_temperature: f64,
    pub max_abs_diff: f64,
    pub ok: bool,
}

/// Tolerance of the identity check.
pub const PARTITION_CHECK_TOL: f64 = 1e-6;

/// Compare the analytic two-term gradient with central finite differences
/// (step 1e-6) of the directly enumerated target log-likelihood.
pub fn partition_gradient_check(
    model: &GibbsToyModel,
    phi: &[f64],
    d_plus: &[usize],
) -> Result<PartitionCheckReport, GibbsError> {
    model.validate()?;
    if d_plus.is_empty() || d_plus.iter().any(|&y| y >= model.reference.len()) {
        return Err(GibbsError::Invalid("target set must be nonempty and in range".into()));
    }
    let analytic = model.two_term_gradient(phi, d_plus);
    let numeric = fd::central_grad(|v| model.target_log_likelihood(v, d_plus), phi, 1e-6);
    let max_abs_diff = fd::max_abs_diff(&analytic, &numeric);
    Ok(PartitionCheckReport {
        responses: model.reference.len(),
        items: model.item_count,
        kl_temperature: model.kl_temperature,
        max_abs_diff,
        ok: max_abs_diff <= PARTITION_CHECK_TOL,
    })
}

/// Random logistic toy model plus a parameter point and target set.
pub fn random_instance(seed: u64) -> (GibbsToyModel, Vec<f64>, Vec<usize>) {
    let mut rng = rng::stream(seed, &[TAG_GRID, 21]);
    let responses = [4usize, 8, 16, 32][rng.gen_range(0..4)];
    let items = rng.gen_range(1..=MAX_ITEMS);
    let dim = rng.gen_range(1..=3);
    let raw: Vec<f64> = (0..responses).map(|_| rng.gen_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let reference = raw.into_iter().map(|w| w / total).collect();
    let features = (0..responses)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let model = GibbsToyModel {
        reference,
        item_count: items,
        kl_temperature: rng.gen_range(0.3..3.0),
        item_model: ItemModel::Logistic { features },
    };
    let phi: Vec<f64> = (0..model.phi_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let good = rng.gen_range(1..=responses.min(4));
    let d_plus = (0..good).collect();
    (model, phi, d_plus)
}
