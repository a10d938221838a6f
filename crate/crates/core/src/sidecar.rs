//! `.quiz.json` sidecar files: generated question sets stored next to, or
//! keyed by the content hash of, the PDF they were generated from.
//!
//! Output is deterministic. Keys are emitted in sorted order, pages keep the
//! order they were given in, and every issue is written as
//! `<Code>@<position>: <detail>`. Issues tied to a question live in that
//! question's `issues` list; set-level issues live in the page's `issues`.

use std::collections::HashSet;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ContentHash, SourceDocument};
use crate::kind::QuestionKind;
use crate::parser::{IssueCode, PageQuestionSet, ParseIssue, QAPair};

pub const FORMAT_VERSION: u32 = 1;
pub const SIDECAR_EXTENSION: &str = ".quiz.json";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SidecarError {
    #[error("duplicate question set for page {page_index} ({kind})")]
    DuplicatePageSet { page_index: usize, kind: QuestionKind },
    #[error("question set for page {page_index} is outside the document ({page_count} pages)")]
    PageOutOfRange { page_index: usize, page_count: usize },
    #[error("invalid question set: {0}")]
    InvalidSet(String),
    #[error("invalid sidecar: {0}")]
    InvalidSidecar(String),
}

/// The subset of [`SourceDocument`] recorded in a sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentDescriptor {
    pub content_hash: ContentHash,
    pub filename: String,
    pub page_count: usize,
}

impl From<&SourceDocument> for DocumentDescriptor {
    fn from(doc: &SourceDocument) -> Self {
        Self {
            content_hash: doc.content_hash,
            filename: doc.filename.clone(),
            page_count: doc.page_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sidecar {
    pub document: DocumentDescriptor,
    /// RFC 3339 timestamp, kept verbatim so re-serialization is byte-stable.
    pub generated_at: String,
    pub pages: Vec<PageQuestionSet>,
}

pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

// Field order below is alphabetical; serde emits fields in declaration order.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarFile {
    document: DocumentFile,
    format_version: u32,
    generated_at: String,
    pages: Vec<PageFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentFile {
    content_hash: String,
    filename: String,
    page_count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PageFile {
    #[serde(default)]
    issues: Vec<String>,
    kind: String,
    page_index: usize,
    questions: Vec<QuestionFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuestionFile {
    answer: String,
    #[serde(default)]
    issues: Vec<String>,
    label: String,
    question: String,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: Option<serde_json::Value>,
}

/// Serializes question sets for `document`.
pub fn serialize_sidecar(
    document: &DocumentDescriptor,
    generated_at: &str,
    sets: &[PageQuestionSet],
) -> Result<String, SidecarError> {
    DateTime::parse_from_rfc3339(generated_at)
        .map_err(|e| SidecarError::InvalidSet(format!("generated_at: {e}")))?;
    let mut seen = HashSet::new();
    let mut pages = Vec::with_capacity(sets.len());
    for set in sets {
        if set.page_index >= document.page_count {
            return Err(SidecarError::PageOutOfRange {
                page_index: set.page_index,
                page_count: document.page_count,
            });
        }
        if !seen.insert((set.page_index, set.kind)) {
            return Err(SidecarError::DuplicatePageSet {
                page_index: set.page_index,
                kind: set.kind,
            });
        }
        pages.push(page_to_file(set)?);
    }
    let file = SidecarFile {
        document: DocumentFile {
            content_hash: document.content_hash.to_hex(),
            filename: document.filename.clone(),
            page_count: document.page_count,
        },
        format_version: FORMAT_VERSION,
        generated_at: generated_at.to_string(),
        pages,
    };
    let mut text = serde_json::to_string_pretty(&file).expect("sidecar structs always serialize");
    text.push('\n');
    Ok(text)
}

impl Sidecar {
    pub fn to_json(&self) -> Result<String, SidecarError> {
        serialize_sidecar(&self.document, &self.generated_at, &self.pages)
    }

    pub fn from_json(text: &str) -> Result<Self, SidecarError> {
        parse_sidecar(text)
    }
}

/// Parses and validates a sidecar document.
pub fn parse_sidecar(text: &str) -> Result<Sidecar, SidecarError> {
    let invalid = |msg: String| SidecarError::InvalidSidecar(msg);
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
    match probe.format_version.as_ref().and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(invalid(format!("unsupported format_version {v}"))),
        None => return Err(invalid("missing or non-integer format_version".into())),
    }
    let file: SidecarFile = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
    DateTime::parse_from_rfc3339(&file.generated_at)
        .map_err(|e| invalid(format!("generated_at: {e}")))?;
    let content_hash = ContentHash::from_hex(&file.document.content_hash)
        .ok_or_else(|| invalid("content_hash must be 64 hex characters".into()))?;
    if file.document.page_count == 0 {
        return Err(invalid("page_count must be at least 1".into()));
    }
    let document = DocumentDescriptor {
        content_hash,
        filename: file.document.filename,
        page_count: file.document.page_count,
    };

    let mut seen = HashSet::new();
    let mut pages = Vec::with_capacity(file.pages.len());
    for page in file.pages {
        let set = page_from_file(page).map_err(invalid)?;
        if set.page_index >= document.page_count {
            return Err(invalid(format!(
                "page_index {} outside document of {} pages",
                set.page_index, document.page_count
            )));
        }
        if !seen.insert((set.page_index, set.kind)) {
            return Err(invalid(format!(
                "duplicate page set for page {} ({})",
                set.page_index, set.kind
            )));
        }
        pages.push(set);
    }
    Ok(Sidecar {
        document,
        generated_at: file.generated_at,
        pages,
    })
}

fn page_to_file(set: &PageQuestionSet) -> Result<PageFile, SidecarError> {
    if !set.kind.generation_supported() {
        return Err(SidecarError::InvalidSet(format!("kind {} cannot be stored", set.kind)));
    }
    let labels: HashSet<&str> = set.pairs.iter().map(|p| p.label.as_str()).collect();
    if labels.len() != set.pairs.len() {
        return Err(SidecarError::InvalidSet(format!(
            "duplicate labels on page {}",
            set.page_index
        )));
    }
    if let Some(orphan) = set
        .issues
        .iter()
        .find(|i| i.label.as_deref().is_some_and(|l| !labels.contains(l)))
    {
        return Err(SidecarError::InvalidSet(format!(
            "issue refers to unknown label {:?}",
            orphan.label
        )));
    }
    let encode = |issues: Vec<&ParseIssue>| issues.into_iter().map(encode_issue).collect();
    Ok(PageFile {
        issues: encode(set.issues.iter().filter(|i| i.label.is_none()).collect()),
        kind: set.kind.slug().to_string(),
        page_index: set.page_index,
        questions: set
            .pairs
            .iter()
            .map(|p| QuestionFile {
                answer: p.answer_text.clone(),
                issues: encode(set.issues_for(&p.label).collect()),
                label: p.label.clone(),
                question: p.question_text.clone(),
            })
            .collect(),
    })
}

fn page_from_file(page: PageFile) -> Result<PageQuestionSet, String> {
    let kind: QuestionKind = page.kind.parse().map_err(|e| format!("{e}"))?;
    let prefix = kind
        .label_prefix()
        .ok_or_else(|| format!("kind {kind} cannot be stored"))?;
    let mut issues = Vec::new();
    for s in &page.issues {
        issues.push(decode_issue(s, None)?);
    }
    let mut pairs = Vec::with_capacity(page.questions.len());
    let mut labels = HashSet::new();
    for q in page.questions {
        let valid_label = q.label.strip_prefix(prefix).is_some_and(|digits| {
            !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
        });
        if !valid_label {
            return Err(format!("label {:?} does not match kind {kind}", q.label));
        }
        if !labels.insert(q.label.clone()) {
            return Err(format!("duplicate label {:?}", q.label));
        }
        if q.question.trim().is_empty() {
            return Err(format!("question {} is empty", q.label));
        }
        for s in &q.issues {
            issues.push(decode_issue(s, Some(&q.label))?);
        }
        pairs.push(QAPair {
            label: q.label,
            question_text: q.question,
            answer_text: q.answer,
        });
    }
    crate::parser::sort_issues(&mut issues);
    Ok(PageQuestionSet {
        page_index: page.page_index,
        kind,
        pairs,
        issues,
    })
}

fn encode_issue(issue: &ParseIssue) -> String {
    format!("{}@{}: {}", issue.code, issue.position, issue.detail)
}

fn decode_issue(s: &str, label: Option<&str>) -> Result<ParseIssue, String> {
    let bad = || format!("malformed issue {s:?}");
    let (code, rest) = s.split_once('@').ok_or_else(bad)?;
    let (position, detail) = rest.split_once(": ").ok_or_else(bad)?;
    Ok(ParseIssue {
        code: code.parse::<IssueCode>()?,
        detail: detail.to_string(),
        position: position.parse().map_err(|_| bad())?,
        label: label.map(str::to_string),
    })
}
