//! Exact ground truth for checklist items and the relaxation statistics
//! built from it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checklist::{Checklist, ItemSemantics};
use crate::constraint::{check_constraint, ConstraintSpec};
use crate::{rat, Rat};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("checklist {checklist} references constraint {index} absent from spec {spec}")]
    ChecklistSpecMismatch {
        checklist: String,
        spec: String,
        index: usize,
    },
    #[error("checklist {0} has no item with defined ground truth")]
    AllSpurious(String),
}

/// Item-level ground truth; `None` marks a spurious item with no defined
/// bit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthVector {
    pub bits: Vec<Option<bool>>,
}

impl GroundTruthVector {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn defined(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().filter_map(|b| *b)
    }

    /// Strict success: every defined bit is 1.
    pub fn strict(&self) -> bool {
        self.defined().all(|b| b)
    }

    /// Partial credit: mean of the defined bits, exact.
    pub fn partial(&self) -> Option<Rat> {
        let defined: Vec<bool> = self.defined().collect();
        if defined.is_empty() {
            return None;
        }
        let ones = defined.iter().filter(|&&b| b).count();
        Some(rat(ones as i64, defined.len() as i64))
    }
}

/// Item-level truth of `text` under `checklist`: faithful items check their
/// constraint, merged items the conjunction of theirs, spurious items carry
/// no bit.
pub fn ground_truth(
    spec: &ConstraintSpec,
    checklist: &Checklist,
    text: &str,
) -> Result<GroundTruthVector, OracleError> {
    if checklist.source_spec != spec.id {
        return Err(OracleError::ChecklistSpecMismatch {
            checklist: checklist.source_spec.clone(),
            spec: spec.id.clone(),
            index: usize::MAX,
        });
    }
    let check_index = |index: usize| -> Result<bool, OracleError> {
        let constraint =
            spec.constraints
                .get(index)
                .ok_or_else(|| OracleError::ChecklistSpecMismatch {
                    checklist: checklist.source_spec.clone(),
                    spec: spec.id.clone(),
                    index,
                })?;
        Ok(check_constraint(constraint, text))
    };
    let mut bits = Vec::with_capacity(checklist.len());
    for item in &checklist.items {
        let bit = match &item.semantics {
            ItemSemantics::Faithful { index } => Some(check_index(*index)?),
            ItemSemantics::Merged { indices } => {
                let mut all = true;
                for &index in indices {
                    all &= check_index(index)?;
                }
                Some(all)
            }
            ItemSemantics::Spurious => None,
        };
        bits.push(bit);
    }
    Ok(GroundTruthVector { bits })
}

/// Strict success, partial credit, and their gap, all exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelaxationStats {
    pub strict: bool,
    pub partial: Rat,
    pub gap: Rat,
}

/// Relaxation statistics of `text` under `checklist`. Spurious items are
/// excluded from the average; an all-spurious checklist is an error.
pub fn relaxation_stats(
    spec: &ConstraintSpec,
    checklist: &Checklist,
    text: &str,
) -> Result<RelaxationStats, OracleError> {
    let truth = ground_truth(spec, checklist, text)?;
    stats_of(&truth).ok_or_else(|| OracleError::AllSpurious(checklist.source_spec.clone()))
}

/// Relaxation statistics from an already-computed truth vector.
pub fn stats_of(truth: &GroundTruthVector) -> Option<RelaxationStats> {
    let partial = truth.partial()?;
    let strict = truth.strict();
    let strict_rat = if strict { rat(1, 1) } else { rat(0, 1) };
    Some(RelaxationStats {
        strict,
        partial,
        gap: partial - strict_rat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checklist::{corrupt_checklist, derive_checklist, CorruptionPlan};
    use crate::constraint::{sample_spec, Constraint};
    use crate::response::SlotAssignment;

    fn paris_spec() -> ConstraintSpec {
        ConstraintSpec::new(
            "spec-paris",
            vec![
                Constraint::ItemCount { n: 3 },
                Constraint::IncludeKeyword { word: "paris".into() },
                Constraint::ExcludeKeyword { word: "travel".into() },
            ],
            0,
        )
        .unwrap()
    }

    /// Three bullets and a paris mention, but the word travel appears too.
    fn two_of_three_text() -> String {
        "* item note paris travel\n* item note\n* item note".to_string()
    }

    #[test]
    fn two_of_three_gives_partial_two_thirds() {
        let spec = paris_spec();
        let checklist = derive_checklist(&spec);
        let truth = ground_truth(&spec, &checklist, &two_of_three_text()).unwrap();
        assert_eq!(truth.bits, vec![Some(true), Some(true), Some(false)]);
        let stats = relaxation_stats(&spec, &checklist, &two_of_three_text()).unwrap();
        assert!(!stats.strict);
        assert_eq!(stats.partial, rat(2, 3));
        assert_eq!(stats.gap, rat(2, 3));
    }

    #[test]
    fn perfect_response_is_all_ones_with_zero_gap() {
        let spec = paris_spec();
        let checklist = derive_checklist(&spec);
        let text = "* item note paris\n* item note\n* item note";
        let truth = ground_truth(&spec, &checklist, text).unwrap();
        assert!(truth.bits.iter().all(|b| *b == Some(true)));
        let stats = relaxation_stats(&spec, &checklist, text).unwrap();
        assert!(stats.strict);
        assert_eq!(stats.gap, rat(0, 1));
    }

    #[test]
    fn one_of_four_arithmetic() {
        let spec = ConstraintSpec::new(
            "spec-4",
            vec![
                Constraint::ItemCount { n: 1 },
                Constraint::IncludeKeyword { word: "paris".into() },
                Constraint::IncludeKeyword { word: "harbor".into() },
                Constraint::AllLowercase,
            ],
            0,
        )
        .unwrap();
        let checklist = derive_checklist(&spec);
        // One bullet only: first constraint true, rest false.
        let text = "* Item note";
        let stats = relaxation_stats(&spec, &checklist, text).unwrap();
        assert_eq!(stats.partial, rat(1, 4));
        assert_eq!(stats.gap, rat(1, 4));
    }

    #[test]
    fn merged_item_is_a_conjunction() {
        let spec = paris_spec();
        let plan = CorruptionPlan { merge_prob: 1.0, ..CorruptionPlan::identity(5) };
        let checklist = corrupt_checklist(&derive_checklist(&spec), &plan);
        // Mentions paris but renders a single bullet: the merged
        // bullets-and-paris item must come out false. All eight combinations
        // of the two underlying bits are exercised by the grid scan below.
        let text = "* item note paris";
        let truth = ground_truth(&spec, &checklist, text).unwrap();
        assert_eq!(truth.bits[0], Some(false));
        for slots in SlotAssignment::enumerate_all().take(64) {
            let rendered = slots.render();
            let merged = ground_truth(&spec, &checklist, &rendered).unwrap();
            let faithful = ground_truth(&spec, &derive_checklist(&spec), &rendered).unwrap();
            let expect = faithful.bits[0].unwrap() && faithful.bits[1].unwrap();
            assert_eq!(merged.bits[0], Some(expect));
        }
    }

    #[test]
    fn mismatched_checklist_is_rejected() {
        let spec = paris_spec();
        let mut checklist = derive_checklist(&spec);
        checklist.source_spec = "spec-else".into();
        assert!(matches!(
            ground_truth(&spec, &checklist, "x"),
            Err(OracleError::ChecklistSpecMismatch { .. })
        ));
    }

    #[test]
    fn all_spurious_checklist_is_an_error() {
        let spec = paris_spec();
        let plan = CorruptionPlan { spurious_prob: 1.0, ..CorruptionPlan::identity(5) };
        let mut checklist = corrupt_checklist(&derive_checklist(&spec), &plan);
        checklist.items.retain(|i| matches!(i.semantics, ItemSemantics::Spurious));
        assert!(matches!(
            relaxation_stats(&spec, &checklist, "x"),
            Err(OracleError::AllSpurious(_))
        ));
    }

    #[test]
    fn witness_of_every_sampled_spec_scores_strict() {
        let family = crate::presets::mixed_family();
        for seed in 0..30 {
            let spec = sample_spec(&family, seed).unwrap();
            let checklist = derive_checklist(&spec);
            let text = spec.witness().unwrap().render();
            let stats = relaxation_stats(&spec, &checklist, &text).unwrap();
            assert!(stats.strict);
            assert_eq!(stats.partial, rat(1, 1));
        }
    }

    #[test]
    fn adding_a_constraint_never_flips_existing_bits() {
        let spec = paris_spec();
        let checklist = derive_checklist(&spec);
        let mut extended = spec.clone();
        extended.constraints.push(Constraint::AllLowercase);
        let ext_checklist = derive_checklist(&extended);
        for slots in SlotAssignment::enumerate_all() {
            let text = slots.render();
            let base = ground_truth(&spec, &checklist, &text).unwrap();
            let mut ext = ground_truth(&extended, &ext_checklist, &text).unwrap();
            ext.bits.truncate(base.len());
            assert_eq!(base.bits, ext.bits);
        }
    }
}
