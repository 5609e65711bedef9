//! Checklist derivation and controlled corruption.
//!
//! A checklist decomposes a constraint spec into atomic yes/no questions.
//! Derivation is deterministic template expansion, one faithful item per
//! constraint. Corruption applies the classic checklist failure modes in a
//! controlled way: dropped items (missing constraints), merged adjacent
//! items (under-decomposition, ground truth by conjunction), duplicated
//! items (over-decomposition; splitting an atomic rule has no finer ground
//! truth than repeating it), and appended spurious items that no
//! environment rule can falsify.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::constraint::{Constraint, ConstraintSpec};
use crate::rng::{self, TAG_CORRUPT};
use rand::Rng;

/// Questions with no ground truth in the environment; corruption appends
/// them to model spurious criteria.
pub const SPURIOUS_QUESTIONS: [&str; 3] = [
    "Is the response engaging?",
    "Is the response well organized?",
    "Is the response polite?",
];

/// What an item actually tests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "semantics", rename_all = "snake_case")]
pub enum ItemSemantics {
    /// One constraint, by index into the source spec.
    Faithful { index: usize },
    /// Conjunction of several constraints.
    Merged { indices: Vec<usize> },
    /// No environment-checkable meaning.
    Spurious,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Derived,
    Corrupted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub id: String,
    pub text: String,
    pub semantics: ItemSemantics,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checklist {
    pub items: Vec<ChecklistItem>,
    pub source_spec: String,
}

impl Checklist {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_fully_faithful(&self) -> bool {
        self.items
            .iter()
            .all(|i| matches!(i.semantics, ItemSemantics::Faithful { .. }))
    }
}

impl fmt::Display for Checklist {
    /// Markdown numbered list, the display form checklists travel in.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, item) in self.items.iter().enumerate() {
            writeln!(f, "{}. {}", i + 1, item.text)?;
        }
        Ok(())
    }
}

fn fragment(c: &Constraint) -> String {
    match c {
        Constraint::ItemCount { n } => format!("contain exactly {n} bullet points"),
        Constraint::IncludeKeyword { word } => format!("mention {word}"),
        Constraint::ExcludeKeyword { word } => format!("avoid the word {word}"),
        Constraint::MinWords { n } => format!("contain at least {n} words"),
        Constraint::MaxWords { n } => format!("contain at most {n} words"),
        Constraint::EndsWith { phrase } => format!("end with {phrase}"),
        Constraint::AllLowercase => "use lowercase throughout".to_string(),
    }
}

fn question(fragments: &[String]) -> String {
    format!("Does the response {}?", fragments.join(" and "))
}

/// One faithful item per constraint, in spec order.
pub fn derive_checklist(spec: &ConstraintSpec) -> Checklist {
    let items = spec
        .constraints
        .iter()
        .enumerate()
        .map(|(index, c)| ChecklistItem {
            id: format!("{}/c{}-{}", spec.id, index, c.label()),
            text: question(&[fragment(c)]),
            semantics: ItemSemantics::Faithful { index },
            provenance: Provenance::Derived,
        })
        .collect();
    Checklist {
        items,
        source_spec: spec.id.clone(),
    }
}

/// Corruption knobs. All probabilities are independent per item; the plan
/// is deterministic under its own seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionPlan {
    /// Drop each item (never below one surviving item).
    #[serde(default)]
    pub drop_prob: f64,
    /// Merge an item with its right neighbor into a conjunction.
    #[serde(default)]
    pub merge_prob: f64,
    /// Duplicate an item in place.
    #[serde(default)]
    pub duplicate_prob: f64,
    /// Append each spurious template question.
    #[serde(default)]
    pub spurious_prob: f64,
    pub seed: u64,
}

impl CorruptionPlan {
    pub fn identity(seed: u64) -> Self {
        CorruptionPlan {
            drop_prob: 0.0,
            merge_prob: 0.0,
            duplicate_prob: 0.0,
            spurious_prob: 0.0,
            seed,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.drop_prob == 0.0
            && self.merge_prob == 0.0
            && self.duplicate_prob == 0.0
            && self.spurious_prob == 0.0
    }
}

/// Apply a corruption plan to a fully faithful checklist.
///
/// Stage order: drop, merge adjacent, duplicate, append spurious. The
/// all-zero plan is the identity map.
pub fn corrupt_checklist(checklist: &Checklist, plan: &CorruptionPlan) -> Checklist {
    debug_assert!(checklist.is_fully_faithful(), "corruption expects a derived checklist");
    let mut rng = rng::stream(plan.seed, &[TAG_CORRUPT]);

    // Drop, keeping at least the first original item.
    let mut kept: Vec<ChecklistItem> = checklist
        .items
        .iter()
        .filter(|_| !(plan.drop_prob > 0.0 && rng.gen::<f64>() < plan.drop_prob))
        .cloned()
        .collect();
    if kept.is_empty() {
        kept.push(checklist.items[0].clone());
    }

    // Merge adjacent pairs, single left-to-right pass.
    let mut merged: Vec<ChecklistItem> = Vec::with_capacity(kept.len());
    let mut i = 0;
    while i < kept.len() {
        if i + 1 < kept.len() && plan.merge_prob > 0.0 && rng.gen::<f64>() < plan.merge_prob {
            let (a, b) = (&kept[i], &kept[i + 1]);
            let mut indices = item_indices(a);
            indices.extend(item_indices(b));
            indices.sort_unstable();
            indices.dedup();
            if indices.len() >= 2 {
                merged.push(ChecklistItem {
                    id: format!("{}+{}", a.id, short_id(&b.id)),
                    text: merge_text(&a.text, &b.text),
                    semantics: ItemSemantics::Merged { indices },
                    provenance: Provenance::Corrupted,
                });
                i += 2;
                continue;
            }
        }
        merged.push(kept[i].clone());
        i += 1;
    }

    // Duplicate in place.
    let mut out: Vec<ChecklistItem> = Vec::with_capacity(merged.len());
    for item in merged {
        let duplicate = plan.duplicate_prob > 0.0 && rng.gen::<f64>() < plan.duplicate_prob;
        out.push(item.clone());
        if duplicate {
            let mut dup = item;
            dup.id.push_str("-dup");
            dup.provenance = Provenance::Corrupted;
            out.push(dup);
        }
    }

    // Append spurious questions.
    for (s, text) in SPURIOUS_QUESTIONS.iter().enumerate() {
        if plan.spurious_prob > 0.0 && rng.gen::<f64>() < plan.spurious_prob {
            out.push(ChecklistItem {
                id: format!("{}/spurious-{s}", checklist.source_spec),
                text: (*text).to_string(),
                semantics: ItemSemantics::Spurious,
                provenance: Provenance::Corrupted,
            });
        }
    }

    Checklist {
        items: out,
        source_spec: checklist.source_spec.clone(),
    }
}

fn item_indices(item: &ChecklistItem) -> Vec<usize> {
    match &item.semantics {
        ItemSemantics::Faithful { index } => vec![*index],
        ItemSemantics::Merged { indices } => indices.clone(),
        ItemSemantics::Spurious => vec![],
    }
}

fn short_id(id: &str) -> &str {
    id.rsplit('/').next().unwrap_or(id)
}

fn merge_text(a: &str, b: &str) -> String {
    let strip = |t: &str| {
        t.trim_start_matches("Does the response ")
            .trim_end_matches('?')
            .to_string()
    };
    question(&[strip(a), strip(b)])
}
