use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Reading-rubric question categories. Only comprehension and analysis
/// questions can be generated; the rest exist so clients can show the full
/// taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Comprehension,
    Analysis,
    Genre,
    RelationshipToText,
    Interpretation,
    ReadersVoice,
}

impl QuestionKind {
    pub const ALL: [QuestionKind; 6] = [
        QuestionKind::Comprehension,
        QuestionKind::Analysis,
        QuestionKind::Genre,
        QuestionKind::RelationshipToText,
        QuestionKind::Interpretation,
        QuestionKind::ReadersVoice,
    ];

    pub fn label_prefix(self) -> Option<char> {
        match self {
            QuestionKind::Comprehension => Some('C'),
            QuestionKind::Analysis => Some('A'),
            _ => None,
        }
    }

    pub fn generation_supported(self) -> bool {
        self.label_prefix().is_some()
    }

    pub fn slug(self) -> &'static str {
        match self {
            QuestionKind::Comprehension => "comprehension",
            QuestionKind::Analysis => "analysis",
            QuestionKind::Genre => "genre",
            QuestionKind::RelationshipToText => "relationship_to_text",
            QuestionKind::Interpretation => "interpretation",
            QuestionKind::ReadersVoice => "readers_voice",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            QuestionKind::Comprehension => {
                "Fact-based questions answerable from the text; they check that the reader can restate what was read."
            }
            QuestionKind::Analysis => {
                "Open questions that push past the text: limitations, comparisons with other work, conclusions of the reader's own."
            }
            QuestionKind::Genre => "Questions about what kind of text this is and how texts of that kind are organised and used.",
            QuestionKind::RelationshipToText => {
                "Questions about the expectations a reader brings to the text and how it bears on their own views."
            }
            QuestionKind::Interpretation => {
                "Questions that ask for alternative readings of the text in light of its context."
            }
            QuestionKind::ReadersVoice => {
                "Questions about how the reader takes part in the discussion around the text."
            }
        }
    }
}

impl fmt::Display for QuestionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownKind(pub String);

impl fmt::Display for UnknownKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown question kind {:?}", self.0)
    }
}

impl std::error::Error for UnknownKind {}

impl FromStr for QuestionKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        QuestionKind::ALL
            .into_iter()
            .find(|k| k.slug() == wanted)
            .ok_or_else(|| UnknownKind(s.to_string()))
    }
}
