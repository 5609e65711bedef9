//! Enumerable response space: slot assignments and their text rendering.
//!
//! A response is a point on a fixed slot grid (bullet count, one flag per
//! tracked keyword, a word-padding choice, casing, and an optional closing
//! phrase) rendered to text by a pure function. The grid is small enough
//! (1280 points) to enumerate, which is what makes exact oracle checks and
//! exact expectations feasible everywhere else in the crate.
//!
//! Each slot controls a specific constraint family, and
//! [`SlotAssignment::satisfies`] mirrors that design at the slot level. The
//! round-trip tests assert that the slot route and the text route agree on
//! the full grid; both are kept on purpose.

use serde::{Deserialize, Serialize};

use crate::constraint::{Constraint, CLOSING_PHRASE, KEYWORDS};

/// Bullet counts the renderer can emit.
pub const BULLET_CHOICES: [u32; 5] = [1, 2, 3, 4, 5];
/// Padding word counts the renderer can emit.
pub const PAD_CHOICES: [u32; 4] = [0, 5, 10, 15];

/// Slot families in canonical order: bullet count, the four keyword flags,
/// padding, casing, closing.
pub const SLOT_COUNT: usize = 8;
/// Value count per slot family, in canonical order.
pub const SLOT_CARDS: [usize; SLOT_COUNT] = [5, 2, 2, 2, 2, 4, 2, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Casing {
    Lower,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closing {
    None,
    Phrase,
}

/// One point of the response grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SlotAssignment {
    pub bullet_count: u32,
    pub keyword_flags: [bool; KEYWORDS.len()],
    pub word_pad: u32,
    pub casing: Casing,
    pub closing: Closing,
}

impl SlotAssignment {
    /// Number of grid points.
    pub fn grid_size() -> usize {
        SLOT_CARDS.iter().product()
    }

    /// Canonical index form, one value index per slot family.
    pub fn to_indices(&self) -> [usize; SLOT_COUNT] {
        let bullet = BULLET_CHOICES
            .iter()
            .position(|&b| b == self.bullet_count)
            .expect("bullet_count on grid");
        let pad = PAD_CHOICES
            .iter()
            .position(|&p| p == self.word_pad)
            .expect("word_pad on grid");
        [
            bullet,
            self.keyword_flags[0] as usize,
            self.keyword_flags[1] as usize,
            self.keyword_flags[2] as usize,
            self.keyword_flags[3] as usize,
            pad,
            matches!(self.casing, Casing::Mixed) as usize,
            matches!(self.closing, Closing::Phrase) as usize,
        ]
    }

    pub fn from_indices(idx: [usize; SLOT_COUNT]) -> Self {
        for (i, &v) in idx.iter().enumerate() {
            assert!(v < SLOT_CARDS[i], "slot {i} index {v} out of range");
        }
        SlotAssignment {
            bullet_count: BULLET_CHOICES[idx[0]],
            keyword_flags: [idx[1] == 1, idx[2] == 1, idx[3] == 1, idx[4] == 1],
            word_pad: PAD_CHOICES[idx[5]],
            casing: if idx[6] == 1 { Casing::Mixed } else { Casing::Lower },
            closing: if idx[7] == 1 { Closing::Phrase } else { Closing::None },
        }
    }

    /// Every grid point, in index order.
    pub fn enumerate_all() -> impl Iterator<Item = SlotAssignment> {
        (0..Self::grid_size()).map(|mut n| {
            let mut idx = [0usize; SLOT_COUNT];
            for i in (0..SLOT_COUNT).rev() {
                idx[i] = n % SLOT_CARDS[i];
                n /= SLOT_CARDS[i];
            }
            SlotAssignment::from_indices(idx)
        })
    }

    /// Exact word count of the rendering, bullet markers included.
    pub fn word_count(&self) -> u32 {
        let flags: u32 = self.keyword_flags.iter().map(|&f| f as u32).sum();
        let closing = match self.closing {
            Closing::Phrase => 2,
            Closing::None => 0,
        };
        self.bullet_count * 3 + flags + self.word_pad + closing
    }

    /// Render to text. Pure; the layout is bullets, an optional pad line,
    /// and the optional closing line.
    pub fn render(&self) -> String {
        let mut lines = Vec::new();
        for b in 0..self.bullet_count {
            let mut line = String::from(match self.casing {
                Casing::Lower => "* item note",
                Casing::Mixed => "* Item note",
            });
            if b == 0 {
                for (w, &on) in KEYWORDS.iter().zip(&self.keyword_flags) {
                    if on {
                        line.push(' ');
                        line.push_str(w);
                    }
                }
            }
            lines.push(line);
        }
        if self.word_pad > 0 {
            lines.push(vec!["pad"; self.word_pad as usize].join(" "));
        }
        if matches!(self.closing, Closing::Phrase) {
            lines.push(match self.casing {
                Casing::Lower => CLOSING_PHRASE.to_ascii_lowercase(),
                Casing::Mixed => CLOSING_PHRASE.to_string(),
            });
        }
        lines.join("\n")
    }

    /// Slot-level satisfaction, the design-side counterpart of
    /// [`crate::constraint::check_constraint`] on the rendering.
    pub fn satisfies(&self, constraint: &Constraint) -> bool {
        match constraint {
            Constraint::ItemCount { n } => self.bullet_count == *n,
            Constraint::IncludeKeyword { word } => self.keyword_flag(word).unwrap_or(false),
            Constraint::ExcludeKeyword { word } => !self.keyword_flag(word).unwrap_or(false),
            Constraint::MinWords { n } => self.word_count() >= *n,
            Constraint::MaxWords { n } => self.word_count() <= *n,
            Constraint::EndsWith { phrase } => {
                matches!(self.closing, Closing::Phrase)
                    && phrase.eq_ignore_ascii_case(CLOSING_PHRASE)
            }
            Constraint::AllLowercase => matches!(self.casing, Casing::Lower),
        }
    }

    fn keyword_flag(&self, word: &str) -> Option<bool> {
        KEYWORDS
            .iter()
            .position(|w| w.eq_ignore_ascii_case(word))
            .map(|i| self.keyword_flags[i])
    }
}
