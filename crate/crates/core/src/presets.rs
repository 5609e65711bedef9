//! Canned constraint families and run configurations used by the scenario
//! presets and the test suites.

use crate::constraint::{FamilyConfig, KindRange};

/// All seven constraint kinds, 1–4 constraints per spec. The general
//  exercise family for oracle and checklist machinery.
pub fn mixed_family() -> FamilyConfig {
    FamilyConfig {
        kinds: vec![
            KindRange::ItemCount { n_min: 1, n_max: 5 },
            KindRange::IncludeKeyword {
                words: vec!["paris".into(), "harbor".into(), "melody".into()],
            },
            KindRange::ExcludeKeyword { words: vec!["travel".into()] },
            KindRange::MinWords { n_min: 3, n_max: 12 },
            KindRange::MaxWords { n_min: 12, n_max: 30 },
            KindRange::EndsWith,
            KindRange::AllLowercase,
        ],
        min_constraints: 1,
        max_constraints: 4,
        max_attempts: 256,
    }
}

/// Three-requirement instructions with prompt-varying parameters used by
/// the self-verification demos: a bullet count in 2..4, one keyword of
/// two, and the closing phrase. The generator can condition on the prompt
/// (its slot logits are bilinear in prompt and value), while the additive
/// verifier head cannot, which is exactly the mismatch the collapse demo
/// exercises.
pub fn demo_family() -> FamilyConfig {
    FamilyConfig {
        kinds: vec![
            KindRange::ItemCount { n_min: 2, n_max: 4 },
            KindRange::IncludeKeyword { words: vec!["paris".into(), "harbor".into()] },
            KindRange::EndsWith,
        ],
        min_constraints: 3,
        max_constraints: 3,
        max_attempts: 256,
    }
}

/// Slot-separable family for external-verifier training runs: every
/// constraint maps to one slot, with varied keywords and casing.
pub fn training_family() -> FamilyConfig {
    FamilyConfig {
        kinds: vec![
            KindRange::ItemCount { n_min: 3, n_max: 3 },
            KindRange::IncludeKeyword { words: vec!["paris".into(), "harbor".into()] },
            KindRange::ExcludeKeyword { words: vec!["travel".into()] },
            KindRange::EndsWith,
            KindRange::AllLowercase,
        ],
        min_constraints: 3,
        max_constraints: 4,
        max_attempts: 256,
    }
}
