//! Near-duplicate question filtering.
//!
//! Questions are compared as sets of content words: lowercase, punctuation
//! stripped, stopwords removed. Similarity is the Jaccard coefficient of the
//! two sets. A candidate is dropped when it scores at or above the threshold
//! against any accepted question or any earlier kept candidate.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parser::{PageQuestionSet, QAPair};

pub const DEFAULT_THRESHOLD: f64 = 0.6;

/// Built-in English stopword list.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few",
    "for", "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers",
    "herself", "him", "himself", "his", "how", "i", "if", "in", "into", "is", "it", "its",
    "itself", "just", "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off",
    "on", "once", "only", "or", "other", "our", "ours", "ourselves", "out", "over", "own", "same",
    "she", "should", "so", "some", "such", "than", "that", "the", "their", "theirs", "them",
    "themselves", "then", "there", "these", "they", "this", "those", "through", "to", "too",
    "under", "until", "up", "very", "was", "we", "were", "what", "when", "where", "which", "while",
    "who", "whom", "why", "will", "with", "would", "you", "your", "yours", "yourself",
];

#[derive(Debug, Error, Clone, PartialEq)]
#[error("dedup threshold must be within [0, 1] (got {0})")]
pub struct ThresholdOutOfRange(pub f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupConfig {
    threshold: f64,
    stopwords: HashSet<String>,
    pub enabled: bool,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            stopwords: STOPWORDS.iter().map(|s| s.to_string()).collect(),
            enabled: true,
        }
    }
}

impl DedupConfig {
    pub fn with_threshold(threshold: f64) -> Result<Self, ThresholdOutOfRange> {
        let mut config = Self::default();
        config.set_threshold(threshold)?;
        Ok(config)
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<(), ThresholdOutOfRange> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(ThresholdOutOfRange(threshold));
        }
        self.threshold = threshold;
        Ok(())
    }

    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.stopwords = words.into_iter().map(|w| w.as_ref().to_lowercase()).collect();
        self
    }

    pub fn stopwords(&self) -> &HashSet<String> {
        &self.stopwords
    }
}

/// Content-word set of `text`.
pub fn tokens(text: &str, config: &DedupConfig) -> HashSet<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty() && !config.stopwords.contains(w))
        .collect()
}

fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let inter = a.intersection(b).count();
            let union = a.len() + b.len() - inter;
            inter as f64 / union as f64
        }
    }
}

pub fn similarity(a: &str, b: &str, config: &DedupConfig) -> f64 {
    jaccard(&tokens(a, config), &tokens(b, config))
}

/// A candidate removed as a near-duplicate of `matched`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedQuestion {
    pub pair: QAPair,
    pub matched: QAPair,
    pub score: f64,
}

/// Drops candidates that repeat an accepted question or an earlier kept
/// candidate. Issues attached to dropped pairs are removed from the kept set.
pub fn filter_repeats(
    candidates: &PageQuestionSet,
    accepted: &[QAPair],
    config: &DedupConfig,
) -> (PageQuestionSet, Vec<DroppedQuestion>) {
    if !config.enabled {
        return (candidates.clone(), Vec::new());
    }
    let mut pool: Vec<(&QAPair, HashSet<String>)> = accepted
        .iter()
        .map(|p| (p, tokens(&p.question_text, config)))
        .collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for cand in &candidates.pairs {
        let cand_tokens = tokens(&cand.question_text, config);
        let best = pool
            .iter()
            .map(|(p, t)| (*p, jaccard(&cand_tokens, t)))
            .fold(None::<(&QAPair, f64)>, |best, (p, s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((p, s)),
            });
        match best {
            Some((matched, score)) if score >= config.threshold => dropped.push(DroppedQuestion {
                pair: cand.clone(),
                matched: matched.clone(),
                score,
            }),
            _ => {
                kept.push(cand.clone());
                pool.push((cand, cand_tokens));
            }
        }
    }
    let kept_labels: HashSet<&str> = kept.iter().map(|p| p.label.as_str()).collect();
    let issues = candidates
        .issues
        .iter()
        .filter(|i| i.label.as_deref().is_none_or(|l| kept_labels.contains(l)))
        .cloned()
        .collect();
    (
        PageQuestionSet {
            page_index: candidates.page_index,
            kind: candidates.kind,
            pairs: kept,
            issues,
        },
        dropped,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kind::QuestionKind;
    use crate::parser::{IssueCode, ParseIssue};

    fn set(questions: &[&str]) -> PageQuestionSet {
        PageQuestionSet {
            page_index: 1,
            kind: QuestionKind::Comprehension,
            pairs: questions
                .iter()
                .enumerate()
                .map(|(i, q)| QAPair::new(format!("C{}", i + 1), *q, "answer"))
                .collect(),
            issues: Vec::new(),
        }
    }

    #[test]
    fn stopword_list_size() {
        assert!((110..=130).contains(&STOPWORDS.len()), "{}", STOPWORDS.len());
        let unique: HashSet<_> = STOPWORDS.iter().collect();
        assert_eq!(unique.len(), STOPWORDS.len());
    }

    #[test]
    fn edge_cases() {
        let c = DedupConfig::default();
        assert_eq!(similarity("What is the key idea?", "What is the key idea?", &c), 1.0);
        assert_eq!(similarity("", "", &c), 1.0);
        assert_eq!(similarity("the of", "", &c), 1.0);
        assert_eq!(similarity("skimming", "", &c), 0.0);
        let none = DedupConfig::default().with_stopwords(Vec::<&str>::new());
        assert_eq!(similarity("alpha beta", "gamma delta", &none), 0.0);
        assert_eq!(similarity("Alpha, BETA!", "beta alpha", &none), 1.0);
    }

    #[test]
    fn threshold_bounds() {
        assert!(DedupConfig::with_threshold(-0.1).is_err());
        assert!(DedupConfig::with_threshold(1.1).is_err());
        assert!(DedupConfig::with_threshold(f64::NAN).is_err());
        assert_eq!(DedupConfig::with_threshold(1.0).unwrap().threshold(), 1.0);
    }

    #[test]
    fn identical_question_is_dropped_with_score_one() {
        let c = DedupConfig::default();
        let page1 = set(&["What is skimming used for?"]);
        let page2 = set(&["What is skimming used for?", "Who reads papers in depth?"]);
        let (kept, dropped) = filter_repeats(&page2, &page1.pairs, &c);
        assert_eq!(kept.pairs.len(), 1);
        assert_eq!(kept.pairs[0].question_text, "Who reads papers in depth?");
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].score, 1.0);
        assert_eq!(dropped[0].matched, page1.pairs[0]);
    }

    #[test]
    fn threshold_one_keeps_non_identical() {
        let c = DedupConfig::with_threshold(1.0).unwrap();
        let s = set(&["How does skimming work?", "How does skimming work in practice?", "Why skim?"]);
        let (kept, dropped) = filter_repeats(&s, &[], &c);
        assert!(dropped.is_empty());
        assert_eq!(kept, s);
    }

    #[test]
    fn disabled_keeps_everything() {
        let s = set(&["Same?", "Same?"]);
        let (kept, dropped) = filter_repeats(&s, &s.pairs, &DedupConfig::disabled());
        assert_eq!(kept, s);
        assert!(dropped.is_empty());
    }

    #[test]
    fn issues_of_dropped_pairs_are_removed() {
        let mut s = set(&["Why skim papers?", "Why skim papers?"]);
        s.issues = vec![
            ParseIssue { code: IssueCode::MissingAnswer, detail: "x".into(), position: 9, label: Some("C2".into()) },
            ParseIssue { code: IssueCode::CountMismatch, detail: "y".into(), position: 20, label: None },
        ];
        let (kept, dropped) = filter_repeats(&s, &[], &DedupConfig::default());
        assert_eq!(dropped.len(), 1);
        assert_eq!(kept.issues.len(), 1);
        assert_eq!(kept.issues[0].code, IssueCode::CountMismatch);
    }
}
