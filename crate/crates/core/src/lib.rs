//! Desk-scale laboratory for checklist-based soft verification in
//! reinforcement learning.
//!
//! The crate couples a synthetic constrained-text environment that has an
//! exact rule-based oracle with:
//!
//! - checklist derivation and controlled corruption ([`checklist`]),
//! - verifier models: oracle, parametric-noisy with optional correlated
//!   errors, and a learned head shared with the generator ([`verifier`]),
//! - the reward engine: soft checklist scores, strict success, and the
//!   partial-credit generator reward, all exact rationals ([`reward`]),
//! - executable estimator theory: closed-form bias/variance/MSE of the
//!   holistic and checklist policy-gradient estimators, size thresholds,
//!   and the partition-gradient identity, each checked against Monte Carlo
//!   or exact enumeration ([`theory`]),
//! - a factored categorical policy whose verification head shares the
//!   embedding table with the generator ([`policy`]),
//! - training loops: external-verifier RL, naive self-verification (which
//!   exhibits always-yes collapse), and the stabilized self-verified loop
//!   with gold/replay co-training and a partition-style Yes-rate penalty
//!   ([`trainer`], [`scenarios`]).

pub mod checklist;
pub mod constraint;
pub mod fd;
pub mod gibbs;
pub mod oracle;
pub mod policy;
pub mod presets;
pub mod response;
pub mod reward;
pub mod rng;
pub mod run;
pub mod scalar;
pub mod scenarios;
pub mod theory;
pub mod trainer;
pub mod verifier;

pub use scalar::Real;

/// Concrete floating scalar used by the policy and training stack.
pub type Scalar = f64;

/// Exact rational used for pass rates, soft scores, and rewards.
pub type Rat = num_rational::Ratio<i64>;

/// Exact rational from a small numerator/denominator pair.
pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(num, den)
}
