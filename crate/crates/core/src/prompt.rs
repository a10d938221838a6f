//! Generation requests and per-page prompt construction.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::PageText;
use crate::kind::QuestionKind;

/// Marker that introduces an answer line. Shared by the prompt and the parser.
pub const ANSWER_MARKER: &str = "Answer:";

pub const MIN_QUESTIONS_PER_PAGE: u32 = 1;
pub const MAX_QUESTIONS_PER_PAGE: u32 = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("question kind {0} cannot be generated (supported: comprehension, analysis)")]
    UnsupportedKind(QuestionKind),
    #[error("questions per page must be between 1 and 10 (got {0})")]
    CountOutOfRange(i64),
    #[error("page has no text to generate questions from")]
    EmptyPage,
    #[error("page range is empty")]
    EmptyPageRange,
    #[error("page {index} is out of range (document has {page_count} pages)")]
    PageOutOfRange { index: usize, page_count: usize },
}

pub fn check_count(n: i64) -> Result<u32, PromptError> {
    if (MIN_QUESTIONS_PER_PAGE as i64..=MAX_QUESTIONS_PER_PAGE as i64).contains(&n) {
        Ok(n as u32)
    } else {
        Err(PromptError::CountOutOfRange(n))
    }
}

pub fn check_kind(kind: QuestionKind) -> Result<QuestionKind, PromptError> {
    if kind.generation_supported() {
        Ok(kind)
    } else {
        Err(PromptError::UnsupportedKind(kind))
    }
}

/// A validated request: which kind, how many per page, and over which pages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    kind: QuestionKind,
    questions_per_page: u32,
    page_range: BTreeSet<usize>,
}

impl GenerationRequest {
    /// Validates the request against a document with `page_count` pages.
    /// `pages = None` selects every page.
    pub fn new(
        kind: QuestionKind,
        questions_per_page: i64,
        pages: Option<&[usize]>,
        page_count: usize,
    ) -> Result<Self, PromptError> {
        let kind = check_kind(kind)?;
        let questions_per_page = check_count(questions_per_page)?;
        let page_range: BTreeSet<usize> = match pages {
            None => (0..page_count).collect(),
            Some(list) => list.iter().copied().collect(),
        };
        if page_range.is_empty() {
            return Err(PromptError::EmptyPageRange);
        }
        if let Some(&index) = page_range.iter().find(|&&i| i >= page_count) {
            return Err(PromptError::PageOutOfRange { index, page_count });
        }
        Ok(Self {
            kind,
            questions_per_page,
            page_range,
        })
    }

    pub fn kind(&self) -> QuestionKind {
        self.kind
    }

    pub fn questions_per_page(&self) -> u32 {
        self.questions_per_page
    }

    /// Requested page indices in ascending order.
    pub fn page_range(&self) -> &BTreeSet<usize> {
        &self.page_range
    }

    /// Same request narrowed to a single page.
    pub fn for_page(&self, page_index: usize) -> Self {
        Self {
            kind: self.kind,
            questions_per_page: self.questions_per_page,
            page_range: BTreeSet::from([page_index]),
        }
    }
}

/// Parses a page selection such as `0-3,7` into indices. Ranges are
/// inclusive; indices are 0-based.
pub fn parse_page_selection(spec: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let start: usize = a.trim().parse().map_err(|_| format!("bad page {a:?}"))?;
                let end: usize = b.trim().parse().map_err(|_| format!("bad page {b:?}"))?;
                if start > end {
                    return Err(format!("descending range {part:?}"));
                }
                out.extend(start..=end);
            }
            None => out.push(part.parse().map_err(|_| format!("bad page {part:?}"))?),
        }
    }
    if out.is_empty() {
        return Err("empty page selection".into());
    }
    Ok(out)
}

/// Renders the generation prompt for one page.
pub fn build_prompt(page: &PageText, kind: QuestionKind, n: u32) -> Result<String, PromptError> {
    check_kind(kind)?;
    check_count(n as i64)?;
    if page.text.trim().is_empty() {
        return Err(PromptError::EmptyPage);
    }
    let prefix = kind.label_prefix().expect("supported kinds carry a prefix");
    let article = if "AEIOU".contains(prefix) { "an" } else { "a" };
    let mut prompt = format!(
        "Write {n} {noun} questions followed by answers to the questions on a new line about the \
         following research article: {text}. Number these questions with {article} {prefix} \
         (like {prefix}1, {prefix}2, etc) and output each question to a new line. Output an \
         answer preceded with '{ANSWER_MARKER}' to a new line after each question.",
        noun = kind.slug(),
        text = page.text,
    );
    if kind == QuestionKind::Analysis {
        prompt.push_str(
            " Write questions that force the reader to reflect and expand beyond the scope of the paper.",
        );
    }
    Ok(prompt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page(text: &str) -> PageText {
        PageText::new(0, text.to_string(), true)
    }

    #[test]
    fn comprehension_prompt_matches_template() {
        let p = build_prompt(&page("Skimming is fast."), QuestionKind::Comprehension, 4).unwrap();
        assert_eq!(
            p,
            "Write 4 comprehension questions followed by answers to the questions on a new line \
             about the following research article: Skimming is fast.. Number these questions with \
             a C (like C1, C2, etc) and output each question to a new line. Output an answer \
             preceded with 'Answer:' to a new line after each question."
        );
    }

    #[test]
    fn analysis_prompt_mirrors_template() {
        let p = build_prompt(&page("text"), QuestionKind::Analysis, 2).unwrap();
        assert!(p.starts_with("Write 2 analysis questions followed by answers"));
        assert!(p.contains("with an A (like A1, A2, etc)"));
        assert!(p.contains("'Answer:'"));
        assert!(p.contains("reflect and expand beyond the scope"));
    }

    #[test]
    fn prompt_errors() {
        let pg = page("text");
        assert_eq!(
            build_prompt(&pg, QuestionKind::Comprehension, 0),
            Err(PromptError::CountOutOfRange(0))
        );
        assert_eq!(
            build_prompt(&pg, QuestionKind::Comprehension, 11),
            Err(PromptError::CountOutOfRange(11))
        );
        assert_eq!(
            build_prompt(&pg, QuestionKind::Genre, 3),
            Err(PromptError::UnsupportedKind(QuestionKind::Genre))
        );
        assert_eq!(
            build_prompt(&page(""), QuestionKind::Analysis, 3),
            Err(PromptError::EmptyPage)
        );
    }

    #[test]
    fn every_supported_kind_names_prefix_and_answer_marker() {
        for kind in QuestionKind::ALL.into_iter().filter(|k| k.generation_supported()) {
            let p = build_prompt(&page("body"), kind, 3).unwrap();
            let prefix = kind.label_prefix().unwrap();
            assert!(p.contains(&format!("(like {prefix}1, {prefix}2, etc)")));
            assert!(p.contains(ANSWER_MARKER));
            assert!(p.contains('3'));
            assert!(p.contains("body"));
        }
    }

    #[test]
    fn request_validation() {
        let r = GenerationRequest::new(QuestionKind::Comprehension, 4, None, 3).unwrap();
        assert_eq!(r.page_range().iter().copied().collect::<Vec<_>>(), [0, 1, 2]);
        assert_eq!(
            GenerationRequest::new(QuestionKind::Comprehension, 4, Some(&[1, 5]), 3),
            Err(PromptError::PageOutOfRange { index: 5, page_count: 3 })
        );
        assert_eq!(
            GenerationRequest::new(QuestionKind::Comprehension, 4, Some(&[]), 3),
            Err(PromptError::EmptyPageRange)
        );
        assert_eq!(
            GenerationRequest::new(QuestionKind::Interpretation, 4, None, 3),
            Err(PromptError::UnsupportedKind(QuestionKind::Interpretation))
        );
        for n in 0..=11 {
            let ok = GenerationRequest::new(QuestionKind::Analysis, n, None, 1).is_ok();
            assert_eq!(ok, (1..=10).contains(&n), "n={n}");
        }
    }

    #[test]
    fn page_selection_syntax() {
        assert_eq!(parse_page_selection("0-2,5").unwrap(), [0, 1, 2, 5]);
        assert_eq!(parse_page_selection(" 3 ").unwrap(), [3]);
        assert!(parse_page_selection("3-1").is_err());
        assert!(parse_page_selection("x").is_err());
        assert!(parse_page_selection("").is_err());
    }
}
