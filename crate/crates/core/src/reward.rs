//! Reward engine: soft checklist scores, strict success, holistic
//! judgments, and the partial-credit generator reward.
//!
//! Scores and rewards are exact rationals internally and only become
//! floating point at the trainer boundary, so every partial-credit example
//! is bit-exact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::RelaxationStats;
use crate::{rat, Rat};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("oracle fields requested but no ground truth was supplied")]
    MissingGroundTruth,
    #[error("reward mode {mode:?} needs {needs} verifier outputs")]
    WrongOutputs { mode: RewardMode, needs: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Partial-credit checklist reward with the beta scale.
    Soft,
    /// All-items-pass bit.
    Strict,
    /// Single whole-response judgment bit.
    Holistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Partial-credit scale; 1 recovers the plain soft reward.
    pub beta_pc: Rat,
    pub mode: RewardMode,
}

impl RewardConfig {
    pub fn soft(beta_pc: Rat) -> Self {
        RewardConfig { beta_pc, mode: RewardMode::Soft }
    }
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { beta_pc: rat(1, 1), mode: RewardMode::Soft }
    }
}

/// Exact rational value of a nonnegative float (the binary expansion, not
/// a decimal approximation). Values too fine for an `i64` ratio fall back
/// to the nearest representable rational.
pub fn beta_from_f64(x: f64) -> Rat {
    assert!(x.is_finite() && x >= 0.0, "scale must be finite and nonnegative");
    if x == 0.0 {
        return rat(0, 1);
    }
    let (mut mantissa, mut exponent, _) = num_traits::Float::integer_decode(x);
    let tz = mantissa.trailing_zeros().min(52);
    mantissa >>= tz;
    exponent += tz as i16;
    if exponent >= 0 {
        if exponent < 10 && mantissa < (1 << 52) {
            return rat((mantissa as i64) << exponent, 1);
        }
    } else if -exponent <= 62 {
        return rat(mantissa as i64, 1i64 << (-exponent));
    }
    Rat::approximate_float(x).unwrap_or_else(|| rat(1, 1))
}

/// Fraction of pass labels, exact.
pub fn soft_score(labels: &[bool]) -> Rat {
    assert!(!labels.is_empty(), "soft score needs at least one label");
    let ones = labels.iter().filter(|&&l| l).count() as i64;
    rat(ones, labels.len() as i64)
}

/// Generator reward: full credit at a strict pass, `beta * s` otherwise.
pub fn generator_reward(s: Rat, beta_pc: Rat) -> Rat {
    if s == rat(1, 1) {
        rat(1, 1)
    } else {
        beta_pc * s
    }
}

/// Item labels, scores, and the generator reward for one response, with
/// the oracle-side counterparts when ground truth was supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub labels: Vec<bool>,
    pub s: Rat,
    pub strict: bool,
    pub r: Rat,
    pub oracle: Option<RelaxationStats>,
}

impl RewardBreakdown {
    pub fn oracle(&self) -> Result<&RelaxationStats, RewardError> {
        self.oracle.as_ref().ok_or(RewardError::MissingGroundTruth)
    }

    /// Reward at the trainer boundary.
    pub fn r_f64(&self) -> f64 {
        *self.r.numer() as f64 / *self.r.denom() as f64
    }
}

/// Verifier outputs a reward can be computed from.
#[derive(Debug, Clone, Copy)]
pub enum VerifierOutputs<'a> {
    /// Aggregated pass labels, one per checklist item.
    Items(&'a [bool]),
    /// One holistic judgment bit.
    Holistic(bool),
}

/// Assemble the mode's reward from verifier outputs.
pub fn reward(
    config: &RewardConfig,
    outputs: VerifierOutputs<'_>,
    oracle: Option<RelaxationStats>,
) -> Result<RewardBreakdown, RewardError> {
    match (config.mode, outputs) {
        (RewardMode::Soft, VerifierOutputs::Items(labels)) => {
            let s = soft_score(labels);
            Ok(RewardBreakdown {
                labels: labels.to_vec(),
                s,
                strict: s == rat(1, 1),
                r: generator_reward(s, config.beta_pc),
                oracle,
            })
        }
        (RewardMode::Strict, VerifierOutputs::Items(labels)) => {
            let s = soft_score(labels);
            let strict = s == rat(1, 1);
            Ok(RewardBreakdown {
                labels: labels.to_vec(),
                s,
                strict,
                r: if strict { rat(1, 1) } else { rat(0, 1) },
                oracle,
            })
        }
        (RewardMode::Holistic, VerifierOutputs::Holistic(bit)) => {
            let r = if bit { rat(1, 1) } else { rat(0, 1) };
            Ok(RewardBreakdown { labels: Vec::new(), s: r, strict: bit, r, oracle })
        }
        (mode @ (RewardMode::Soft | RewardMode::Strict), VerifierOutputs::Holistic(_)) => {
            Err(RewardError::WrongOutputs { mode, needs: "item-level" })
        }
        (RewardMode::Holistic, VerifierOutputs::Items(_)) => {
            Err(RewardError::WrongOutputs { mode: RewardMode::Holistic, needs: "holistic" })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_conversion_is_exact_for_dyadic_values() {
        assert_eq!(beta_from_f64(0.5), rat(1, 2));
        assert_eq!(beta_from_f64(1.0), rat(1, 1));
        assert_eq!(beta_from_f64(0.75), rat(3, 4));
        assert_eq!(beta_from_f64(0.0), rat(0, 1));
        assert_eq!(beta_from_f64(3.0), rat(3, 1));
        // Non-dyadic values convert to their exact binary expansion.
        let b = beta_from_f64(0.1);
        assert_eq!(*b.numer() as f64 / *b.denom() as f64, 0.1);
    }

    #[test]
    fn soft_score_examples() {
        assert_eq!(soft_score(&[true, true, false]), rat(2, 3));
        assert_eq!(soft_score(&[true; 4]), rat(1, 1));
        assert_eq!(soft_score(&[false; 3]), rat(0, 1));
    }

    #[test]
    fn generator_reward_examples() {
        assert_eq!(generator_reward(rat(1, 1), rat(7, 2)), rat(1, 1));
        assert_eq!(generator_reward(rat(2, 3), rat(1, 2)), rat(1, 3));
        assert_eq!(generator_reward(rat(0, 1), rat(1, 2)), rat(0, 1));
    }

    #[test]
    fn reward_modes() {
        let soft = RewardConfig::default();
        let b = reward(&soft, VerifierOutputs::Items(&[true, true, false]), None).unwrap();
        assert_eq!(b.r, rat(2, 3));
        assert!(!b.strict);

        let strict = RewardConfig { beta_pc: rat(1, 1), mode: RewardMode::Strict };
        let b = reward(&strict, VerifierOutputs::Items(&[true, true, true]), None).unwrap();
        assert_eq!(b.r, rat(1, 1));
        let b = reward(&strict, VerifierOutputs::Items(&[true, false]), None).unwrap();
        assert_eq!(b.r, rat(0, 1));

        let holistic = RewardConfig { beta_pc: rat(1, 1), mode: RewardMode::Holistic };
        let b = reward(&holistic, VerifierOutputs::Holistic(true), None).unwrap();
        assert_eq!(b.r, rat(1, 1));
    }

    #[test]
    fn mode_and_outputs_must_match() {
        let holistic = RewardConfig { beta_pc: rat(1, 1), mode: RewardMode::Holistic };
        assert!(reward(&holistic, VerifierOutputs::Items(&[true]), None).is_err());
        let soft = RewardConfig::default();
        assert!(reward(&soft, VerifierOutputs::Holistic(true), None).is_err());
    }

    #[test]
    fn oracle_fields_are_only_there_when_supplied() {
        let soft = RewardConfig::default();
        let b = reward(&soft, VerifierOutputs::Items(&[true]), None).unwrap();
        assert!(matches!(b.oracle(), Err(RewardError::MissingGroundTruth)));
    }

    #[test]
    fn reward_is_monotone_in_labels_and_bounded() {
        let cfg = RewardConfig::soft(rat(1, 2));
        let mut labels = vec![false; 5];
        let mut last = rat(-1, 1);
        for i in 0..=labels.len() {
            if i > 0 {
                labels[i - 1] = true;
            }
            let b = reward(&cfg, VerifierOutputs::Items(&labels), None).unwrap();
            assert!(b.r >= last);
            assert!(b.r >= rat(0, 1) && b.r <= rat(1, 1));
            last = b.r;
        }
        assert_eq!(last, rat(1, 1));
    }

    #[test]
    fn beta_one_soft_reward_equals_plain_mean() {
        for ones in 0..=4i64 {
            let labels: Vec<bool> = (0..4).map(|i| i < ones).collect();
            let b = reward(&RewardConfig::default(), VerifierOutputs::Items(&labels), None).unwrap();
            assert_eq!(b.r, rat(ones, 4));
        }
    }
}
