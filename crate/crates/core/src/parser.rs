//! Line-oriented parser for provider replies.
//!
//! Expected shape, one question per label line and one answer per marker line:
//!
//! ```text
//! C1. What is X?
//! Answer: X is Y.
//! C2) Why Z?
//! Answer: Because W.
//! ```
//!
//! A question label is the kind's prefix (any case) and digits followed by
//! `.`, `:`, `)` or whitespace. Question text runs until the answer marker
//! or the next label; answer text runs until the next label. When a reply
//! has no labels at all, bulleted (`-`, `•`) and bare-numbered (`1.`)
//! lines are accepted as questions and relabeled. Every deviation is
//! reported as a [`ParseIssue`]; strict mode turns any issue into an error.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::normalize_whitespace;
use crate::kind::QuestionKind;
use crate::prompt::{check_count, check_kind, PromptError, ANSWER_MARKER};

/// Replies are never split into more than `expected_n + RUNAWAY_SLACK` pairs.
pub const RUNAWAY_SLACK: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QAPair {
    pub label: String,
    pub question_text: String,
    pub answer_text: String,
}

impl QAPair {
    pub fn new(label: impl Into<String>, question: impl Into<String>, answer: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            question_text: question.into(),
            answer_text: answer.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IssueCode {
    MissingAnswer,
    UnlabeledQuestion,
    CountMismatch,
    RenumberedLabel,
}

impl IssueCode {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueCode::MissingAnswer => "MissingAnswer",
            IssueCode::UnlabeledQuestion => "UnlabeledQuestion",
            IssueCode::CountMismatch => "CountMismatch",
            IssueCode::RenumberedLabel => "RenumberedLabel",
        }
    }
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IssueCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "MissingAnswer" => Ok(IssueCode::MissingAnswer),
            "UnlabeledQuestion" => Ok(IssueCode::UnlabeledQuestion),
            "CountMismatch" => Ok(IssueCode::CountMismatch),
            "RenumberedLabel" => Ok(IssueCode::RenumberedLabel),
            other => Err(format!("unknown issue code {other:?}")),
        }
    }
}

/// A recoverable deviation from the expected reply format.
///
/// `label` names the (normalized) pair the issue belongs to; set-level
/// issues such as `CountMismatch` have none.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParseIssue {
    pub code: IssueCode,
    pub detail: String,
    pub position: usize,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageQuestionSet {
    pub page_index: usize,
    pub kind: QuestionKind,
    pub pairs: Vec<QAPair>,
    pub issues: Vec<ParseIssue>,
}

impl PageQuestionSet {
    pub fn empty(page_index: usize, kind: QuestionKind) -> Self {
        Self {
            page_index,
            kind,
            pairs: Vec::new(),
            issues: Vec::new(),
        }
    }

    pub fn with_page(mut self, page_index: usize) -> Self {
        self.page_index = page_index;
        self
    }

    pub fn issues_for<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a ParseIssue> + 'a {
        self.issues
            .iter()
            .filter(move |i| i.label.as_deref() == Some(label))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no questions found in provider reply")]
    NoQuestionsFound,
    #[error("malformed provider reply ({} issue(s), first: {})", .0.len(), .0.first().map(|i| i.detail.as_str()).unwrap_or(""))]
    MalformedResponse(Vec<ParseIssue>),
    #[error(transparent)]
    InvalidRequest(#[from] PromptError),
}

/// Puts issues in canonical order: by position, then code, label and detail.
pub fn sort_issues(issues: &mut [ParseIssue]) {
    issues.sort_by(|a, b| {
        (a.position, a.code, &a.label, &a.detail).cmp(&(b.position, b.code, &b.label, &b.detail))
    });
}

/// Renders pairs in the canonical grammar the prompt asks for.
pub fn render_canonical(pairs: &[QAPair]) -> String {
    pairs
        .iter()
        .map(|p| format!("{}. {}\n{ANSWER_MARKER} {}\n", p.label, p.question_text, p.answer_text))
        .collect()
}

enum Line<'a> {
    Label { number: &'a str, rest: &'a str },
    Answer(&'a str),
    Recovered { marker: &'a str, rest: &'a str },
    Text(&'a str),
    Blank,
}

struct Patterns {
    label: Regex,
    answer: Regex,
    bullet: Regex,
    numbered: Regex,
}

fn patterns(prefix: char) -> Patterns {
    static ANSWER: OnceLock<Regex> = OnceLock::new();
    static BULLET: OnceLock<Regex> = OnceLock::new();
    static NUMBERED: OnceLock<Regex> = OnceLock::new();
    let marker = regex::escape(ANSWER_MARKER.trim_end_matches(':'));
    Patterns {
        label: Regex::new(&format!(r"(?i)^\s*{}(\d+)(?:[.:)]|\s|$)\s*(.*)$", regex::escape(&prefix.to_string())))
            .expect("label regex"),
        answer: ANSWER
            .get_or_init(|| Regex::new(&format!(r"(?i)^\s*{marker}\s*:\s*(.*)$")).expect("answer regex"))
            .clone(),
        bullet: BULLET
            .get_or_init(|| Regex::new(r"^\s*([-•])\s+(.*)$").expect("bullet regex"))
            .clone(),
        numbered: NUMBERED
            .get_or_init(|| Regex::new(r"^\s*(\d+[.)])\s+(.*)$").expect("numbered regex"))
            .clone(),
    }
}

impl Patterns {
    fn classify<'a>(&self, line: &'a str, recover: bool) -> Line<'a> {
        if line.trim().is_empty() {
            return Line::Blank;
        }
        if let Some(c) = self.label.captures(line) {
            return Line::Label {
                number: c.get(1).map_or("", |m| m.as_str()),
                rest: c.get(2).map_or("", |m| m.as_str()),
            };
        }
        if let Some(c) = self.answer.captures(line) {
            return Line::Answer(c.get(1).map_or("", |m| m.as_str()));
        }
        if recover {
            for re in [&self.bullet, &self.numbered] {
                if let Some(c) = re.captures(line) {
                    return Line::Recovered {
                        marker: c.get(1).map_or("", |m| m.as_str()),
                        rest: c.get(2).map_or("", |m| m.as_str()),
                    };
                }
            }
        }
        Line::Text(line.trim())
    }
}

enum Origin {
    Labeled(String),
    Recovered(String),
}

struct Block<'a> {
    origin: Origin,
    position: usize,
    question: Vec<&'a str>,
    answer: Option<Vec<&'a str>>,
}

/// Parses a provider reply into labeled question/answer pairs.
///
/// The returned set has `page_index` 0; callers set the real page with
/// [`PageQuestionSet::with_page`].
pub fn parse_qa(
    raw: &str,
    kind: QuestionKind,
    expected_n: u32,
    strict: bool,
) -> Result<PageQuestionSet, ParseError> {
    let kind = check_kind(kind)?;
    check_count(expected_n as i64)?;
    let prefix = kind.label_prefix().expect("supported kinds carry a prefix");
    let pats = patterns(prefix);

    let lines: Vec<(usize, &str)> = {
        let mut offset = 0;
        raw.split('\n')
            .map(|l| {
                let start = offset;
                offset += l.chars().count() + 1;
                (start, l.trim_end_matches('\r'))
            })
            .collect()
    };
    let has_labels = lines
        .iter()
        .any(|(_, l)| matches!(pats.classify(l, false), Line::Label { .. }));
    let recover = !has_labels;

    let mut issues = Vec::new();
    let mut blocks: Vec<Block> = Vec::new();
    for &(pos, line) in &lines {
        match pats.classify(line, recover) {
            Line::Blank => {}
            Line::Label { number, rest } => blocks.push(Block {
                origin: Origin::Labeled(format!("{prefix}{number}")),
                position: pos,
                question: non_empty(rest),
                answer: None,
            }),
            Line::Recovered { marker, rest } => blocks.push(Block {
                origin: Origin::Recovered(marker.to_string()),
                position: pos,
                question: non_empty(rest),
                answer: None,
            }),
            Line::Answer(rest) => if let Some(block) = blocks.last_mut() { match &mut block.answer {
                None => block.answer = Some(non_empty(rest)),
                Some(answer) => answer.push(line.trim()),
            } },
            Line::Text(text) => match blocks.last_mut() {
                Some(block) => match &mut block.answer {
                    Some(answer) => answer.push(text),
                    None => block.question.push(text),
                },
                None if text.ends_with('?') => issues.push(ParseIssue {
                    code: IssueCode::UnlabeledQuestion,
                    detail: format!("question-like line without a {prefix} label was skipped"),
                    position: pos,
                    label: None,
                }),
                None => {}
            },
        }
    }

    let limit = expected_n as usize + RUNAWAY_SLACK;
    let mut pairs = Vec::new();
    let mut truncated = 0usize;
    for block in blocks {
        let question = normalize_whitespace(&block.question.join(" "));
        if question.is_empty() {
            issues.push(ParseIssue {
                code: IssueCode::UnlabeledQuestion,
                detail: "label without question text was skipped".into(),
                position: block.position,
                label: None,
            });
            continue;
        }
        if pairs.len() == limit {
            truncated += 1;
            continue;
        }
        let label = format!("{prefix}{}", pairs.len() + 1);
        match &block.origin {
            Origin::Labeled(original) if !original.eq_ignore_ascii_case(&label) => {
                issues.push(ParseIssue {
                    code: IssueCode::RenumberedLabel,
                    detail: format!("{original} renumbered to {label}"),
                    position: block.position,
                    label: Some(label.clone()),
                });
            }
            Origin::Labeled(_) => {}
            Origin::Recovered(marker) => issues.push(ParseIssue {
                code: IssueCode::RenumberedLabel,
                detail: format!("question marked {marker:?} relabeled as {label}"),
                position: block.position,
                label: Some(label.clone()),
            }),
        }
        let answer = normalize_whitespace(&block.answer.unwrap_or_default().join(" "));
        if answer.is_empty() {
            issues.push(ParseIssue {
                code: IssueCode::MissingAnswer,
                detail: format!("{label} has no answer"),
                position: block.position,
                label: Some(label.clone()),
            });
        }
        pairs.push(QAPair {
            label,
            question_text: question,
            answer_text: answer,
        });
    }

    if pairs.is_empty() {
        return Err(ParseError::NoQuestionsFound);
    }
    if pairs.len() != expected_n as usize || truncated > 0 {
        let detail = if truncated > 0 {
            format!(
                "expected {expected_n} questions, kept {} and discarded {truncated} more",
                pairs.len()
            )
        } else {
            format!("expected {expected_n} questions, found {}", pairs.len())
        };
        issues.push(ParseIssue {
            code: IssueCode::CountMismatch,
            detail,
            position: raw.chars().count(),
            label: None,
        });
    }
    sort_issues(&mut issues);
    if strict && !issues.is_empty() {
        return Err(ParseError::MalformedResponse(issues));
    }
    Ok(PageQuestionSet {
        page_index: 0,
        kind,
        pairs,
        issues,
    })
}

fn non_empty(s: &str) -> Vec<&str> {
    let s = s.trim();
    if s.is_empty() {
        Vec::new()
    } else {
        vec![s]
    }
}
