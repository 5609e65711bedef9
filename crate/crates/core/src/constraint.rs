//! Synthetic constraint universe and its exact rule-based checker.
//!
//! A [`ConstraintSpec`] is the machine-checkable core of one synthetic
//! instruction: an ordered list of [`Constraint`]s that a rendered response
//! either satisfies or not, with no judgment calls. Text semantics are
//! pinned exactly:
//!
//! - a *word* is any whitespace-delimited token (bullet markers included),
//! - a *bullet* is a line starting with `"* "`,
//! - keyword and suffix matching are ASCII case-insensitive on whole
//!   tokens,
//! - the lowercase check looks for ASCII uppercase bytes only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::response::SlotAssignment;
use crate::rng::{self, TAG_SPEC};
use rand::Rng;

/// Keyword vocabulary tracked by the response space. Include/exclude
/// constraints draw from this list and responses carry one on/off flag per
/// entry.
pub const KEYWORDS: [&str; 4] = ["paris", "travel", "harbor", "melody"];

/// The one closing phrase the environment can emit.
pub const CLOSING_PHRASE: &str = "Happy Reading!";

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error("invalid constraint spec: {0}")]
    InvalidSpec(String),
    #[error("no satisfiable spec found for this family after {attempts} attempts")]
    UnsatisfiableFamily { attempts: usize },
}

/// One rule-checkable requirement.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    /// Exactly `n` bullet lines.
    ItemCount { n: u32 },
    /// Some word token equals `word` (ASCII case-insensitive).
    IncludeKeyword { word: String },
    /// No word token equals `word`.
    ExcludeKeyword { word: String },
    /// At least `n` word tokens.
    MinWords { n: u32 },
    /// At most `n` word tokens.
    MaxWords { n: u32 },
    /// The trimmed text ends with `phrase` (ASCII case-insensitive).
    EndsWith { phrase: String },
    /// No ASCII uppercase byte anywhere.
    AllLowercase,
}

impl Constraint {
    pub fn validate(&self) -> Result<(), ConstraintError> {
        let keyword_ok = |w: &str| !w.is_empty() && !w.chars().any(char::is_whitespace);
        match self {
            Constraint::ItemCount { n } | Constraint::MinWords { n } | Constraint::MaxWords { n } => {
                if *n < 1 {
                    return Err(ConstraintError::InvalidSpec(format!(
                        "{self:?}: count parameter must be >= 1"
                    )));
                }
            }
            Constraint::IncludeKeyword { word } | Constraint::ExcludeKeyword { word } => {
                if !keyword_ok(word) {
                    return Err(ConstraintError::InvalidSpec(format!(
                        "keyword {word:?} must be nonempty and whitespace-free"
                    )));
                }
            }
            Constraint::EndsWith { phrase } => {
                if phrase.trim().is_empty() {
                    return Err(ConstraintError::InvalidSpec("empty closing phrase".into()));
                }
            }
            Constraint::AllLowercase => {}
        }
        Ok(())
    }

    /// Short stable name used in checklist item ids and diagnostics.
    pub fn label(&self) -> String {
        match self {
            Constraint::ItemCount { n } => format!("item_count_{n}"),
            Constraint::IncludeKeyword { word } => format!("include_{word}"),
            Constraint::ExcludeKeyword { word } => format!("exclude_{word}"),
            Constraint::MinWords { n } => format!("min_words_{n}"),
            Constraint::MaxWords { n } => format!("max_words_{n}"),
            Constraint::EndsWith { .. } => "ends_with".into(),
            Constraint::AllLowercase => "all_lowercase".into(),
        }
    }
}

fn word_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

fn bullet_line_count(text: &str) -> usize {
    text.lines().filter(|l| l.starts_with("* ")).count()
}

/// 1 iff `text` satisfies `constraint`. Pure and total on valid inputs.
pub fn check_constraint(constraint: &Constraint, text: &str) -> bool {
    match constraint {
        Constraint::ItemCount { n } => bullet_line_count(text) == *n as usize,
        Constraint::IncludeKeyword { word } => {
            word_tokens(text).any(|t| t.eq_ignore_ascii_case(word))
        }
        Constraint::ExcludeKeyword { word } => {
            !word_tokens(text).any(|t| t.eq_ignore_ascii_case(word))
        }
        Constraint::MinWords { n } => word_tokens(text).count() >= *n as usize,
        Constraint::MaxWords { n } => word_tokens(text).count() <= *n as usize,
        Constraint::EndsWith { phrase } => text
            .trim_end()
            .to_ascii_lowercase()
            .ends_with(&phrase.to_ascii_lowercase()),
        Constraint::AllLowercase => !text.bytes().any(|b| b.is_ascii_uppercase()),
    }
}

/// One synthetic instruction: an ordered, jointly satisfiable constraint
/// list plus the seed that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub id: String,
    pub constraints: Vec<Constraint>,
    pub seed: u64,
}

impl ConstraintSpec {
    pub fn new(id: impl Into<String>, constraints: Vec<Constraint>, seed: u64) -> Result<Self, ConstraintError> {
        let spec = Self { id: id.into(), constraints, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConstraintError> {
        if self.constraints.is_empty() || self.constraints.len() > 8 {
            return Err(ConstraintError::InvalidSpec(format!(
                "spec {} must hold 1..=8 constraints, got {}",
                self.id,
                self.constraints.len()
            )));
        }
        for c in &self.constraints {
            c.validate()?;
        }
        for (i, a) in self.constraints.iter().enumerate() {
            if self.constraints[i + 1..].contains(a) {
                return Err(ConstraintError::InvalidSpec(format!(
                    "duplicate constraint {a:?} in spec {}",
                    self.id
                )));
            }
        }
        let min = self.constraints.iter().find_map(|c| match c {
            Constraint::MinWords { n } => Some(*n),
            _ => None,
        });
        let max = self.constraints.iter().find_map(|c| match c {
            Constraint::MaxWords { n } => Some(*n),
            _ => None,
        });
        if let (Some(lo), Some(hi)) = (min, max) {
            if lo > hi {
                return Err(ConstraintError::InvalidSpec(format!(
                    "spec {}: MinWords({lo}) > MaxWords({hi})",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// First slot assignment whose rendering satisfies every constraint.
    pub fn witness(&self) -> Option<SlotAssignment> {
        SlotAssignment::enumerate_all().find(|s| self.constraints.iter().all(|c| s.satisfies(c)))
    }
}

/// Parameter ranges for one constraint kind a family may emit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KindRange {
    ItemCount { n_min: u32, n_max: u32 },
    IncludeKeyword { words: Vec<String> },
    ExcludeKeyword { words: Vec<String> },
    MinWords { n_min: u32, n_max: u32 },
    MaxWords { n_min: u32, n_max: u32 },
    EndsWith,
    AllLowercase,
}

/// Distribution over constraint specs: allowed kinds with parameter ranges
/// and the constraint count range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub kinds: Vec<KindRange>,
    pub min_constraints: usize,
    pub max_constraints: usize,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

fn default_attempts() -> usize {
    256
}

impl FamilyConfig {
    pub fn validate(&self) -> Result<(), ConstraintError> {
        if self.kinds.is_empty() {
            return Err(ConstraintError::InvalidSpec("family lists no kinds".into()));
        }
        if self.min_constraints < 1
            || self.min_constraints > self.max_constraints
            || self.max_constraints > 8
        {
            return Err(ConstraintError::InvalidSpec(format!(
                "family constraint count range {}..={} out of bounds",
                self.min_constraints, self.max_constraints
            )));
        }
        for k in &self.kinds {
            match k {
                KindRange::ItemCount { n_min, n_max }
                | KindRange::MinWords { n_min, n_max }
                | KindRange::MaxWords { n_min, n_max } => {
                    if n_min < &1 || n_min > n_max {
                        return Err(ConstraintError::InvalidSpec(format!(
                            "bad parameter range in {k:?}"
                        )));
                    }
                }
                KindRange::IncludeKeyword { words } | KindRange::ExcludeKeyword { words } => {
                    if words.is_empty() || words.iter().any(|w| !KEYWORDS.contains(&w.as_str())) {
                        return Err(ConstraintError::InvalidSpec(format!(
                            "keywords in {k:?} must be drawn from {KEYWORDS:?}"
                        )));
                    }
                }
                KindRange::EndsWith | KindRange::AllLowercase => {}
            }
        }
        Ok(())
    }
}

fn draw_constraint(kind: &KindRange, rng: &mut impl Rng) -> Constraint {
    match kind {
        KindRange::ItemCount { n_min, n_max } => Constraint::ItemCount {
            n: rng.gen_range(*n_min..=*n_max),
        },
        KindRange::IncludeKeyword { words } => Constraint::IncludeKeyword {
            word: words[rng.gen_range(0..words.len())].clone(),
        },
        KindRange::ExcludeKeyword { words } => Constraint::ExcludeKeyword {
            word: words[rng.gen_range(0..words.len())].clone(),
        },
        KindRange::MinWords { n_min, n_max } => Constraint::MinWords {
            n: rng.gen_range(*n_min..=*n_max),
        },
        KindRange::MaxWords { n_min, n_max } => Constraint::MaxWords {
            n: rng.gen_range(*n_min..=*n_max),
        },
        KindRange::EndsWith => Constraint::EndsWith {
            phrase: CLOSING_PHRASE.to_string(),
        },
        KindRange::AllLowercase => Constraint::AllLowercase,
    }
}

/// Sample a jointly satisfiable spec. Deterministic given `seed`; fails
/// with [`ConstraintError::UnsatisfiableFamily`] once the attempt budget is
/// exhausted.
pub fn sample_spec(family: &FamilyConfig, seed: u64) -> Result<ConstraintSpec, ConstraintError> {
    family.validate()?;
    let mut rng = rng::stream(seed, &[TAG_SPEC]);
    for _attempt in 0..family.max_attempts {
        let count = rng.gen_range(family.min_constraints..=family.max_constraints);
        let mut constraints: Vec<Constraint> = Vec::with_capacity(count);
        let mut draws = 0usize;
        while constraints.len() < count && draws < 64 {
            draws += 1;
            let kind = &family.kinds[rng.gen_range(0..family.kinds.len())];
            let c = draw_constraint(kind, &mut rng);
            if !constraints.contains(&c) {
                constraints.push(c);
            }
        }
        if constraints.len() < count {
            continue;
        }
        let candidate = ConstraintSpec {
            id: format!("spec-{seed:016x}"),
            constraints,
            seed,
        };
        if candidate.validate().is_ok() && candidate.witness().is_some() {
            return Ok(candidate);
        }
    }
    Err(ConstraintError::UnsatisfiableFamily {
        attempts: family.max_attempts,
    })
}
