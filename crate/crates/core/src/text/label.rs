use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Punctuation following a word. `None` is the background class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PunctLabel {
    None,
    Comma,
    Period,
    Question,
}

impl PunctLabel {
    pub const ALL: [PunctLabel; 4] = [PunctLabel::None, PunctLabel::Comma, PunctLabel::Period, PunctLabel::Question];

    /// The three marks that are scored.
    pub const MARKS: [PunctLabel; 3] = [PunctLabel::Comma, PunctLabel::Period, PunctLabel::Question];

    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PunctLabel::None => "NONE",
            PunctLabel::Comma => "COMMA",
            PunctLabel::Period => "PERIOD",
            PunctLabel::Question => "QUESTION",
        }
    }

    /// Mark written after the word when rendering text.
    pub fn mark(self) -> Option<char> {
        match self {
            PunctLabel::None => None,
            PunctLabel::Comma => Some(','),
            PunctLabel::Period => Some('.'),
            PunctLabel::Question => Some('?'),
        }
    }

    /// Label for a detachable punctuation character.
    pub fn from_mark(c: char) -> Option<Self> {
        match c {
            ',' => Some(PunctLabel::Comma),
            '.' | '!' | ';' => Some(PunctLabel::Period),
            '?' => Some(PunctLabel::Question),
            _ => None,
        }
    }
}

impl fmt::Display for PunctLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownLabel(pub String);

impl fmt::Display for UnknownLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown label `{}`", self.0)
    }
}

impl FromStr for PunctLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "NONE" => Ok(PunctLabel::None),
            "COMMA" => Ok(PunctLabel::Comma),
            "PERIOD" => Ok(PunctLabel::Period),
            "QUESTION" => Ok(PunctLabel::Question),
            other => Err(UnknownLabel(other.to_string())),
        }
    }
}
