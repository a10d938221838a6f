//! Per-page generation jobs.
//!
//! A job runs prompt → completion → parse → dedup for every requested page.
//! Provider calls overlap up to the configured parallelism, but pages are
//! finalized strictly in ascending order: each page is deduplicated against
//! everything accepted on earlier pages, then emitted. Output is therefore
//! identical for any parallelism setting, and the first page reaches
//! consumers long before the last provider call returns.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use chrono::{DateTime, Utc};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::dedup::{filter_repeats, DedupConfig, DroppedQuestion};
use crate::ingest::{truncate_to_budget, DocumentId, PageText, SourceDocument, DEFAULT_PAGE_CHAR_BUDGET};
use crate::kind::QuestionKind;
use crate::parser::{parse_qa, PageQuestionSet, ParseError, QAPair};
use crate::prompt::{build_prompt, GenerationRequest, PromptError};
use crate::provider::{CompletionClient, ProviderConfig, ProviderError};
use crate::sidecar::format_timestamp;
use crate::store::{DocumentStore, StoreError};

#[derive(Debug, Error)]
pub enum JobError {
    #[error("job rejected: {0}")]
    JobRejected(#[from] PromptError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(String);

impl JobId {
    pub fn generate() -> Self {
        Self(Uuid::new_v4().simple().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<String> for JobId {
    fn from(value: String) -> Self {
        Self(value)
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobStatus {
    Running,
    Completed,
    Failed,
    PartiallyCompleted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PageStatus {
    Pending,
    Done,
    Errored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub job_id: JobId,
    pub document_id: DocumentId,
    pub request: GenerationRequest,
    pub status: JobStatus,
    pub per_page_status: BTreeMap<usize, PageStatus>,
}

impl GenerationJob {
    pub fn new(document_id: DocumentId, request: GenerationRequest) -> Self {
        let per_page_status = request
            .page_range()
            .iter()
            .map(|&p| (p, PageStatus::Pending))
            .collect();
        Self {
            job_id: JobId::generate(),
            document_id,
            request,
            status: JobStatus::Running,
            per_page_status,
        }
    }

    pub fn mark(&mut self, page_index: usize, status: PageStatus) {
        self.per_page_status.insert(page_index, status);
    }

    /// Derives the final status from the per-page statuses.
    pub fn finish(&mut self) {
        let done = self.per_page_status.values().filter(|s| **s == PageStatus::Done).count();
        let errored = self.per_page_status.values().filter(|s| **s == PageStatus::Errored).count();
        self.status = if done == self.per_page_status.len() {
            JobStatus::Completed
        } else if done > 0 && errored > 0 {
            JobStatus::PartiallyCompleted
        } else {
            JobStatus::Failed
        };
    }
}

/// Why a page produced no questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageFailure {
    pub code: String,
    pub message: String,
}

impl PageFailure {
    fn empty_page() -> Self {
        Self {
            code: "empty_page".into(),
            message: "page has no extractable text".into(),
        }
    }
}

impl From<&ProviderError> for PageFailure {
    fn from(e: &ProviderError) -> Self {
        let code = match e {
            ProviderError::ProviderTimeout { .. } => "provider_timeout",
            ProviderError::ProviderUnavailable { .. } => "provider_unavailable",
            ProviderError::ProviderRejected { .. } => "provider_rejected",
            ProviderError::MalformedResponse(_) => "provider_malformed_response",
            ProviderError::CredentialMissing(_) => "credential_missing",
            ProviderError::InvalidConfig(_) => "provider_config",
        };
        Self {
            code: code.into(),
            message: e.to_string(),
        }
    }
}

impl From<&ParseError> for PageFailure {
    fn from(e: &ParseError) -> Self {
        let code = match e {
            ParseError::NoQuestionsFound => "no_questions_found",
            ParseError::MalformedResponse(_) => "malformed_response",
            ParseError::InvalidRequest(_) => "invalid_request",
        };
        Self {
            code: code.into(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PageOutcome {
    Done { questions: PageQuestionSet },
    Errored { error: PageFailure },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageResult {
    pub page_index: usize,
    #[serde(flatten)]
    pub outcome: PageOutcome,
    pub dropped: Vec<DroppedQuestion>,
    pub latency_ms: u64,
}

impl PageResult {
    pub fn questions(&self) -> Option<&PageQuestionSet> {
        match &self.outcome {
            PageOutcome::Done { questions } => Some(questions),
            PageOutcome::Errored { .. } => None,
        }
    }

    pub fn failure(&self) -> Option<&PageFailure> {
        match &self.outcome {
            PageOutcome::Errored { error } => Some(error),
            PageOutcome::Done { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JobEvent {
    Page(PageResult),
    Done(GenerationJob),
}

/// Knobs that are not part of the user-facing request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobOptions {
    pub page_char_budget: usize,
    pub strict_parse: bool,
}

impl Default for JobOptions {
    fn default() -> Self {
        Self {
            page_char_budget: DEFAULT_PAGE_CHAR_BUDGET,
            strict_parse: false,
        }
    }
}

struct RawPage {
    page_index: usize,
    outcome: Result<PageQuestionSet, PageFailure>,
    started: Instant,
}

async fn generate_raw(
    page: PageText,
    kind: QuestionKind,
    n: u32,
    client: CompletionClient,
    options: JobOptions,
) -> RawPage {
    let started = Instant::now();
    let page_index = page.page_index;
    let outcome = async {
        if page.text.trim().is_empty() {
            return Err(PageFailure::empty_page());
        }
        let budgeted = PageText::new(
            page_index,
            truncate_to_budget(&page.text, options.page_char_budget).to_string(),
            true,
        );
        let prompt = build_prompt(&budgeted, kind, n).map_err(|e| PageFailure {
            code: "invalid_request".into(),
            message: e.to_string(),
        })?;
        let completion = client.complete(&prompt).await.map_err(|e| PageFailure::from(&e))?;
        parse_qa(&completion.text, kind, n, options.strict_parse)
            .map(|set| set.with_page(page_index))
            .map_err(|e| PageFailure::from(&e))
    }
    .await;
    RawPage {
        page_index,
        outcome,
        started,
    }
}

fn finalize(raw: RawPage, accepted: &mut Vec<QAPair>, dedup: &DedupConfig) -> PageResult {
    let (outcome, dropped) = match raw.outcome {
        Ok(set) => {
            let (kept, dropped) = filter_repeats(&set, accepted, dedup);
            accepted.extend(kept.pairs.iter().cloned());
            (PageOutcome::Done { questions: kept }, dropped)
        }
        Err(error) => (PageOutcome::Errored { error }, Vec::new()),
    };
    PageResult {
        page_index: raw.page_index,
        outcome,
        dropped,
        latency_ms: raw.started.elapsed().as_millis() as u64,
    }
}

/// Runs `job` and streams one [`JobEvent::Page`] per requested page, in
/// ascending page order, followed by a single [`JobEvent::Done`].
///
/// `pages` must contain every page in the request's range. Page-level
/// failures are reported inside their `PageResult`; the stream always
/// completes.
pub fn run_job(
    job: GenerationJob,
    pages: &[PageText],
    client: CompletionClient,
    dedup: DedupConfig,
    options: JobOptions,
) -> impl Stream<Item = JobEvent> + Send + 'static {
    let kind = job.request.kind();
    let n = job.request.questions_per_page();
    let parallel = client.config().max_parallel_calls.max(1);
    let selected: Vec<PageText> = job
        .request
        .page_range()
        .iter()
        .map(|&i| {
            pages
                .iter()
                .find(|p| p.page_index == i)
                .cloned()
                .unwrap_or_else(|| PageText::new(i, String::new(), false))
        })
        .collect();

    let raw_results = stream::iter(selected)
        .map(move |page| generate_raw(page, kind, n, client.clone(), options))
        .buffered(parallel);

    struct State<S> {
        raw: S,
        job: Option<GenerationJob>,
        accepted: Vec<QAPair>,
        dedup: DedupConfig,
    }

    stream::unfold(
        State {
            raw: Box::pin(raw_results),
            job: Some(job),
            accepted: Vec::new(),
            dedup,
        },
        |mut state| async move {
            let job = state.job.as_mut()?;
            match state.raw.next().await {
                Some(raw) => {
                    let result = finalize(raw, &mut state.accepted, &state.dedup);
                    let status = if result.questions().is_some() {
                        PageStatus::Done
                    } else {
                        PageStatus::Errored
                    };
                    job.mark(result.page_index, status);
                    Some((JobEvent::Page(result), state))
                }
                None => {
                    let mut job = state.job.take().expect("job present until done");
                    job.finish();
                    Some((JobEvent::Done(job), state))
                }
            }
        },
    )
}

/// Convenience: validates the request against the document and runs it to
/// completion, returning every page result and the final job.
pub async fn run_job_to_end(
    document: &SourceDocument,
    pages: &[PageText],
    request: GenerationRequest,
    client: &CompletionClient,
    dedup: &DedupConfig,
    options: JobOptions,
) -> (Vec<PageResult>, GenerationJob) {
    let job = GenerationJob::new(document.id.clone(), request);
    let mut results = Vec::new();
    let mut finished = None;
    let mut events = Box::pin(run_job(job, pages, client.clone(), dedup.clone(), options));
    while let Some(event) = events.next().await {
        match event {
            JobEvent::Page(r) => results.push(r),
            JobEvent::Done(j) => finished = Some(j),
        }
    }
    (results, finished.expect("job stream always ends with Done"))
}

/// Generates one page, deduplicating against `accepted`.
pub async fn generate_page(
    page: &PageText,
    request: &GenerationRequest,
    client: &CompletionClient,
    dedup: &DedupConfig,
    accepted: &[QAPair],
    options: JobOptions,
) -> PageResult {
    let raw = generate_raw(
        page.clone(),
        request.kind(),
        request.questions_per_page(),
        client.clone(),
        options,
    )
    .await;
    let mut accepted = accepted.to_vec();
    finalize(raw, &mut accepted, dedup)
}

/// Regenerates one page of a stored document and, on success, replaces the
/// stored set for that (page, kind). Failures leave storage untouched.
#[allow(clippy::too_many_arguments)]
pub async fn regenerate_page(
    store: &DocumentStore,
    document_key: &str,
    page_index: usize,
    kind: QuestionKind,
    questions_per_page: i64,
    client: &CompletionClient,
    dedup: &DedupConfig,
    options: JobOptions,
) -> Result<PageResult, JobError> {
    let stored = store.get(document_key)?;
    let request = GenerationRequest::new(
        kind,
        questions_per_page,
        Some(&[page_index]),
        stored.document.page_count,
    )?;
    let page = &stored.pages[page_index];
    let accepted: Vec<QAPair> = store
        .load_results(document_key)?
        .into_iter()
        .filter(|s| s.page_index != page_index)
        .flat_map(|s| s.pairs)
        .collect();
    let result = generate_page(page, &request, client, dedup, &accepted, options).await;
    if let Some(set) = result.questions() {
        store.upsert_results(
            &stored.document,
            std::slice::from_ref(set),
            &sidecar_timestamp(client.config()),
        )?;
    }
    Ok(result)
}

/// Timestamp recorded in sidecars. `SOURCE_DATE_EPOCH` wins when set; the
/// mock provider pins the Unix epoch so its output is reproducible.
pub fn sidecar_timestamp(provider: &ProviderConfig) -> String {
    if let Some(ts) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| DateTime::<Utc>::from_timestamp(secs, 0))
    {
        return format_timestamp(ts);
    }
    if provider.is_mock() {
        return format_timestamp(DateTime::<Utc>::UNIX_EPOCH);
    }
    format_timestamp(Utc::now())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::ingest::extract_document;
    use crate::provider::ProviderConfig;

    fn client(options: &str, parallel: usize) -> CompletionClient {
        let mut cfg = ProviderConfig::mock(options);
        cfg.max_parallel_calls = parallel;
        cfg.backoff_base = std::time::Duration::from_millis(1);
        CompletionClient::new(cfg).unwrap()
    }

    async fn run(pages: usize, options: &str, n: i64, parallel: usize) -> (Vec<PageResult>, GenerationJob) {
        let (doc, texts) = extract_document(&fixtures::marked_pdf(pages), "f.pdf").unwrap();
        let request = GenerationRequest::new(QuestionKind::Comprehension, n, None, doc.page_count).unwrap();
        run_job_to_end(&doc, &texts, request, &client(options, parallel), &DedupConfig::default(), JobOptions::default()).await
    }

    #[tokio::test]
    async fn three_pages_complete() {
        let (results, job) = run(3, "", 4, 2).await;
        assert_eq!(job.status, JobStatus::Completed);
        assert_eq!(results.iter().map(|r| r.page_index).collect::<Vec<_>>(), [0, 1, 2]);
        for r in &results {
            let set = r.questions().unwrap();
            let labels: Vec<_> = set.pairs.iter().map(|p| p.label.as_str()).collect();
            assert_eq!(labels, ["C1", "C2", "C3", "C4"]);
            assert!(set.pairs.iter().all(|p| !p.answer_text.is_empty()));
            assert!(set.issues.is_empty());
        }
    }

    #[tokio::test]
    async fn one_failing_page_is_isolated() {
        let (results, job) = run(3, "fail_on=PAGE-1", 4, 2).await;
        assert_eq!(job.status, JobStatus::PartiallyCompleted);
        assert!(results[0].questions().is_some());
        assert_eq!(results[1].failure().unwrap().code, "provider_rejected");
        assert!(results[2].questions().is_some());
        assert_eq!(job.per_page_status[&1], PageStatus::Errored);
    }

    #[tokio::test]
    async fn all_pages_failing_is_failed() {
        let (_, job) = run(2, "fail_on=PAGE-", 1, 1).await;
        assert_eq!(job.status, JobStatus::Failed);
    }

    #[tokio::test]
    async fn empty_page_errors_without_aborting() {
        let bytes = fixtures::pdf_with_image_page(&["PAGE-0 words here", "PAGE-2 more words"], 1);
        let (doc, texts) = extract_document(&bytes, "scan.pdf").unwrap();
        let request = GenerationRequest::new(QuestionKind::Analysis, 2, None, doc.page_count).unwrap();
        let (results, job) =
            run_job_to_end(&doc, &texts, request, &client("", 2), &DedupConfig::default(), JobOptions::default()).await;
        assert_eq!(results[1].failure().unwrap().code, "empty_page");
        assert_eq!(results[0].questions().unwrap().pairs[0].label, "A1");
        assert_eq!(job.status, JobStatus::PartiallyCompleted);
    }

    #[tokio::test]
    async fn output_is_independent_of_parallelism() {
        let (a, _) = run(5, "repeat=1", 3, 1).await;
        let (b, _) = run(5, "repeat=1", 3, 4).await;
        let sets = |rs: &[PageResult]| rs.iter().map(|r| r.questions().cloned()).collect::<Vec<_>>();
        assert_eq!(sets(&a), sets(&b));
        // page 0 keeps the repeated question, later pages drop it
        assert_eq!(a[0].questions().unwrap().pairs.len(), 3);
        for r in &a[1..] {
            assert_eq!(r.questions().unwrap().pairs.len(), 2);
            assert_eq!(r.dropped.len(), 1);
            assert_eq!(r.dropped[0].score, 1.0);
        }
    }

    #[tokio::test]
    async fn page_subset_is_respected() {
        let (doc, texts) = extract_document(&fixtures::marked_pdf(4), "f.pdf").unwrap();
        let request = GenerationRequest::new(QuestionKind::Comprehension, 1, Some(&[3, 1]), 4).unwrap();
        let (results, job) =
            run_job_to_end(&doc, &texts, request, &client("", 2), &DedupConfig::default(), JobOptions::default()).await;
        assert_eq!(results.iter().map(|r| r.page_index).collect::<Vec<_>>(), [1, 3]);
        assert_eq!(job.per_page_status.keys().copied().collect::<Vec<_>>(), [1, 3]);
    }

    #[tokio::test]
    async fn regenerate_replaces_only_its_page_and_kind() {
        let dir = tempfile::tempdir().unwrap();
        let store = DocumentStore::open(dir.path()).unwrap();
        let bytes = fixtures::marked_pdf(3);
        let (doc, texts) = extract_document(&bytes, "f.pdf").unwrap();
        let (stored, _) = store.insert(doc, texts, &bytes).unwrap();
        let id = stored.document.id.as_str();
        let c = client("", 2);
        let dedup = DedupConfig::default();
        let opts = JobOptions::default();

        for page in 0..3 {
            regenerate_page(&store, id, page, QuestionKind::Comprehension, 4, &c, &dedup, opts).await.unwrap();
        }
        let r = regenerate_page(&store, id, 0, QuestionKind::Comprehension, 2, &c, &dedup, opts).await.unwrap();
        assert_eq!(r.questions().unwrap().pairs.len(), 2);
        let stored_sets = store.load_results(id).unwrap();
        assert_eq!(stored_sets[0].pairs.len(), 2);
        assert_eq!(stored_sets[1].pairs.len(), 4);

        regenerate_page(&store, id, 0, QuestionKind::Analysis, 3, &c, &dedup, opts).await.unwrap();
        let kinds: Vec<_> = store
            .load_results(id)
            .unwrap()
            .into_iter()
            .filter(|s| s.page_index == 0)
            .map(|s| (s.kind, s.pairs.len()))
            .collect();
        assert_eq!(kinds, [(QuestionKind::Comprehension, 2), (QuestionKind::Analysis, 3)]);

        let before = store.load_results(id).unwrap();
        let mut slow = ProviderConfig::mock("timeout_on=PAGE-0");
        slow.timeout = std::time::Duration::from_millis(10);
        slow.max_retries = 1;
        slow.backoff_base = std::time::Duration::from_millis(1);
        let slow = CompletionClient::new(slow).unwrap();
        let r = regenerate_page(&store, id, 0, QuestionKind::Comprehension, 5, &slow, &dedup, opts).await.unwrap();
        assert_eq!(r.failure().unwrap().code, "provider_timeout");
        assert_eq!(store.load_results(id).unwrap(), before);

        assert!(matches!(
            regenerate_page(&store, id, 7, QuestionKind::Comprehension, 2, &c, &dedup, opts).await,
            Err(JobError::JobRejected(PromptError::PageOutOfRange { .. }))
        ));
    }

    #[test]
    fn status_derivation() {
        let request = GenerationRequest::new(QuestionKind::Comprehension, 1, None, 2).unwrap();
        let mut job = GenerationJob::new(DocumentId::generate(), request);
        job.mark(0, PageStatus::Done);
        job.mark(1, PageStatus::Done);
        job.finish();
        assert_eq!(job.status, JobStatus::Completed);
        job.mark(1, PageStatus::Errored);
        job.finish();
        assert_eq!(job.status, JobStatus::PartiallyCompleted);
        job.mark(0, PageStatus::Errored);
        job.finish();
        assert_eq!(job.status, JobStatus::Failed);
    }

    #[test]
    fn page_result_json_shape() {
        let r = PageResult {
            page_index: 2,
            outcome: PageOutcome::Errored { error: PageFailure::empty_page() },
            dropped: Vec::new(),
            latency_ms: 5,
        };
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["status"], "errored");
        assert_eq!(v["error"]["code"], "empty_page");
        assert_eq!(v["page_index"], 2);
        let back: PageResult = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }
}
