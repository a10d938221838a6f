//! JSON + server-sent-events API.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/api/documents` | multipart upload, idempotent by content hash |
//! | GET | `/api/documents/:id` | document summary |
//! | GET, HEAD | `/api/documents/:id/file` | original PDF bytes |
//! | GET | `/api/documents/:id/questions?page=&kind=` | stored question sets |
//! | POST | `/api/documents/:id/jobs` | start a generation job |
//! | POST | `/api/documents/:id/pages/:page/regenerate` | regenerate one page |
//! | GET | `/api/jobs/:id` | job snapshot |
//! | GET | `/api/jobs/:id/events` | `page` events, then one `done` |

use std::collections::{BTreeSet, HashMap};
use std::convert::Infallible;
use std::sync::{Arc, Mutex};

use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::watch;
use tracing::{info, warn};

use quizread_core::dedup::DedupConfig;
use quizread_core::ingest::{extract_document, looks_like_pdf, ContentHash, IngestLimits, SourceDocument};
use quizread_core::job::{
    regenerate_page, run_job, sidecar_timestamp, GenerationJob, JobEvent, JobId, JobOptions, PageFailure,
    PageOutcome, PageResult, PageStatus,
};
use quizread_core::kind::QuestionKind;
use quizread_core::parser::PageQuestionSet;
use quizread_core::prompt::{check_count, GenerationRequest, PromptError};
use quizread_core::provider::CompletionClient;
use quizread_core::store::{DocumentStore, StoredDocument};

use crate::error::{ApiError, ErrorCode};

/// Multipart framing allowance on top of the file size limit.
const MULTIPART_OVERHEAD: usize = 64 * 1024;
const DEFAULT_QUESTIONS_PER_PAGE: i64 = 4;

pub struct AppState {
    store: Arc<DocumentStore>,
    client: CompletionClient,
    dedup: DedupConfig,
    options: JobOptions,
    limits: IngestLimits,
    jobs: Mutex<HashMap<JobId, Arc<JobHandle>>>,
    /// Documents with a job or regeneration in progress.
    busy: Mutex<HashMap<ContentHash, Busy>>,
}

#[derive(Debug, Clone)]
enum Busy {
    Job(JobId),
    Regenerating,
}

impl AppState {
    pub fn new(
        store: DocumentStore,
        client: CompletionClient,
        dedup: DedupConfig,
        options: JobOptions,
        limits: IngestLimits,
    ) -> Self {
        Self {
            store: Arc::new(store),
            client,
            dedup,
            options,
            limits,
            jobs: Mutex::new(HashMap::new()),
            busy: Mutex::new(HashMap::new()),
        }
    }

    pub fn client(&self) -> &CompletionClient {
        &self.client
    }

    pub fn store(&self) -> &DocumentStore {
        &self.store
    }

    fn job(&self, id: &str) -> Result<Arc<JobHandle>, ApiError> {
        self.jobs
            .lock()
            .expect("job table poisoned")
            .get(&JobId::from(id.to_string()))
            .cloned()
            .ok_or_else(|| ApiError::new(ErrorCode::JobNotFound, format!("job {id} not found")))
    }

    fn claim(&self, hash: ContentHash, what: Busy) -> Result<(), ApiError> {
        let mut busy = self.busy.lock().expect("busy table poisoned");
        if let Some(current) = busy.get(&hash) {
            let detail = match current {
                Busy::Job(id) => format!("job {id} is already running for this document"),
                Busy::Regenerating => "a page of this document is being regenerated".to_string(),
            };
            return Err(ApiError::new(ErrorCode::JobAlreadyRunning, detail));
        }
        busy.insert(hash, what);
        Ok(())
    }

    fn release(&self, hash: &ContentHash) {
        self.busy.lock().expect("busy table poisoned").remove(hash);
    }
}

/// Append-only event log of one job; readers follow it with a cursor.
pub struct JobHandle {
    log: Mutex<JobLog>,
    version: watch::Sender<usize>,
}

struct JobLog {
    events: Vec<JobEvent>,
    snapshot: GenerationJob,
}

impl JobHandle {
    fn new(job: GenerationJob) -> Self {
        Self {
            log: Mutex::new(JobLog {
                events: Vec::new(),
                snapshot: job,
            }),
            version: watch::channel(0).0,
        }
    }

    fn push(&self, event: JobEvent) {
        let len = {
            let mut log = self.log.lock().expect("job log poisoned");
            match &event {
                JobEvent::Page(r) => {
                    let status = if r.questions().is_some() { PageStatus::Done } else { PageStatus::Errored };
                    log.snapshot.mark(r.page_index, status);
                }
                JobEvent::Done(job) => log.snapshot = job.clone(),
            }
            log.events.push(event);
            log.events.len()
        };
        self.version.send_replace(len);
    }

    fn event(&self, index: usize) -> Option<JobEvent> {
        self.log.lock().expect("job log poisoned").events.get(index).cloned()
    }

    fn snapshot(&self) -> GenerationJob {
        self.log.lock().expect("job log poisoned").snapshot.clone()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let body_limit = usize::try_from(state.limits.max_upload_bytes)
        .unwrap_or(usize::MAX)
        .saturating_add(MULTIPART_OVERHEAD);
    Router::new()
        .route("/api/documents", post(upload))
        .route("/api/documents/:id", get(document))
        .route("/api/documents/:id/file", get(file))
        .route("/api/documents/:id/questions", get(questions))
        .route("/api/documents/:id/jobs", post(start_job))
        .route("/api/documents/:id/pages/:page/regenerate", post(regenerate))
        .route("/api/jobs/:id", get(job_status))
        .route("/api/jobs/:id/events", get(job_events))
        .fallback(|| async { ApiError::new(ErrorCode::NotFound, "no such endpoint") })
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSummary {
    pub document_id: String,
    pub filename: String,
    pub page_count: usize,
    pub content_hash: ContentHash,
    pub byte_size: u64,
}

impl From<&SourceDocument> for DocumentSummary {
    fn from(d: &SourceDocument) -> Self {
        Self {
            document_id: d.id.to_string(),
            filename: d.filename.clone(),
            page_count: d.page_count,
            content_hash: d.content_hash,
            byte_size: d.byte_size,
        }
    }
}

fn clean_filename(name: Option<&str>) -> String {
    let base = name
        .and_then(|n| n.rsplit(['/', '\\']).next())
        .map(str::trim)
        .filter(|n| !n.is_empty());
    base.unwrap_or("document.pdf").to_string()
}

async fn upload(
    State(state): State<Arc<AppState>>,
    multipart: Result<Multipart, MultipartRejection>,
) -> Result<(StatusCode, Json<DocumentSummary>), ApiError> {
    let mut multipart = multipart
        .map_err(|e| ApiError::new(ErrorCode::UnsupportedMediaType, format!("expected a multipart/form-data upload: {e}")))?;
    let limit = state.limits.max_upload_bytes;
    let too_large = || ApiError::new(ErrorCode::PayloadTooLarge, format!("upload exceeds the {limit}-byte limit"));

    let mut upload: Option<(String, Vec<u8>)> = None;
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(field)) => field,
            Ok(None) => break,
            Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => return Err(too_large()),
            Err(e) => return Err(ApiError::new(ErrorCode::InvalidRequest, e.body_text())),
        };
        if field.file_name().is_none() && field.name() != Some("file") {
            continue;
        }
        if upload.is_some() {
            return Err(ApiError::new(ErrorCode::InvalidRequest, "expected exactly one file part"));
        }
        let filename = clean_filename(field.file_name());
        let bytes = match field.bytes().await {
            Ok(b) => b,
            Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => return Err(too_large()),
            Err(e) => return Err(ApiError::new(ErrorCode::InvalidRequest, e.body_text())),
        };
        upload = Some((filename, bytes.to_vec()));
    }
    let (filename, bytes) = upload.ok_or_else(|| ApiError::new(ErrorCode::InvalidRequest, "no file part in upload"))?;
    if bytes.len() as u64 > limit {
        return Err(too_large());
    }
    if !looks_like_pdf(&bytes) {
        return Err(ApiError::new(ErrorCode::UnsupportedMediaType, "only PDF documents are supported"));
    }

    let hash = ContentHash::of(&bytes);
    if let Some(existing) = state.store.find_by_hash(&hash) {
        return Ok((StatusCode::OK, Json(DocumentSummary::from(&existing.document))));
    }
    let store = state.store.clone();
    let (stored, created) = tokio::task::spawn_blocking(move || -> Result<(StoredDocument, bool), ApiError> {
        let (document, pages) = extract_document(&bytes, &filename)?;
        Ok(store.insert(document, pages, &bytes)?)
    })
    .await
    .map_err(|e| ApiError::new(ErrorCode::Internal, format!("ingest task failed: {e}")))??;
    info!(document = %stored.document.id, pages = stored.document.page_count, created, "document uploaded");
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(DocumentSummary::from(&stored.document))))
}

fn load(state: &AppState, id: &str) -> Result<StoredDocument, ApiError> {
    Ok(state.store.get(id)?)
}

async fn document(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<DocumentSummary>, ApiError> {
    Ok(Json(DocumentSummary::from(&load(&state, &id)?.document)))
}

async fn file(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let stored = load(&state, &id)?;
    let bytes = state.store.read_pdf(&id)?;
    let disposition = format!("inline; filename=\"{}\"", stored.document.filename.replace(['"', '\\'], "_"));
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/pdf"));
    headers.insert(header::CONTENT_LENGTH, HeaderValue::from(bytes.len()));
    if let Ok(v) = HeaderValue::from_str(&disposition) {
        headers.insert(header::CONTENT_DISPOSITION, v);
    }
    Ok((headers, bytes).into_response())
}

async fn questions(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(filters): Query<HashMap<String, String>>,
) -> Result<Json<Vec<PageQuestionSet>>, ApiError> {
    let stored = load(&state, &id)?;
    let page = filters
        .get("page")
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| ApiError::new(ErrorCode::InvalidFilter, format!("page must be a non-negative integer (got {p:?})")))
        })
        .transpose()?;
    if let Some(page) = page.filter(|&p| p >= stored.document.page_count) {
        return Err(PromptError::PageOutOfRange {
            index: page,
            page_count: stored.document.page_count,
        }
        .into());
    }
    let kind = filters
        .get("kind")
        .map(|k| {
            k.parse::<QuestionKind>()
                .map_err(|e| ApiError::new(ErrorCode::InvalidFilter, e.to_string()))
        })
        .transpose()?;
    if let Some(unknown) = filters.keys().find(|k| !matches!(k.as_str(), "page" | "kind")) {
        return Err(ApiError::new(ErrorCode::InvalidFilter, format!("unknown filter {unknown:?}")));
    }
    let sets = state
        .store
        .load_results(&id)?
        .into_iter()
        .filter(|s| page.is_none_or(|p| s.page_index == p))
        .filter(|s| kind.is_none_or(|k| s.kind == k))
        .collect();
    Ok(Json(sets))
}

/// Validated job parameters from a JSON body.
struct JobParams {
    kind: QuestionKind,
    questions_per_page: i64,
    pages: Option<Vec<usize>>,
}

fn job_params(body: Result<Json<Value>, JsonRejection>, allow_pages: bool) -> Result<JobParams, ApiError> {
    let Json(body) = body.map_err(|e| ApiError::new(ErrorCode::InvalidRequest, e.body_text()))?;
    let obj = body
        .as_object()
        .ok_or_else(|| ApiError::new(ErrorCode::InvalidRequest, "request body must be a JSON object"))?;
    let allowed: &[&str] = if allow_pages {
        &["kind", "questions_per_page", "pages"]
    } else {
        &["kind", "questions_per_page"]
    };
    if let Some(unknown) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(ApiError::new(ErrorCode::InvalidRequest, format!("unknown field {unknown:?}")));
    }
    let kind = match obj.get("kind") {
        None | Some(Value::Null) => QuestionKind::Comprehension,
        Some(Value::String(s)) => s.parse::<QuestionKind>()?,
        Some(_) => return Err(ApiError::new(ErrorCode::InvalidRequest, "kind must be a string")),
    };
    let questions_per_page = match obj.get("questions_per_page") {
        None | Some(Value::Null) => DEFAULT_QUESTIONS_PER_PAGE,
        Some(Value::Number(n)) => match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(i), _, _) => i,
            // Too large for i64: necessarily out of range.
            (None, Some(_), _) => i64::MAX,
            (None, None, Some(f)) if f.fract() == 0.0 => {
                return Err(PromptError::CountOutOfRange(f.clamp(i64::MIN as f64, i64::MAX as f64) as i64).into())
            }
            _ => return Err(ApiError::new(ErrorCode::InvalidRequest, "questions_per_page must be an integer")),
        },
        Some(_) => return Err(ApiError::new(ErrorCode::InvalidRequest, "questions_per_page must be an integer")),
    };
    let pages = match obj.get("pages") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => Some(
            items
                .iter()
                .map(|v| {
                    v.as_u64()
                        .and_then(|p| usize::try_from(p).ok())
                        .ok_or_else(|| ApiError::new(ErrorCode::PageOutOfRange, format!("invalid page index {v}")))
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
        Some(_) => return Err(ApiError::new(ErrorCode::InvalidRequest, "pages must be an array of page indices")),
    };
    Ok(JobParams {
        kind,
        questions_per_page,
        pages,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JobStarted {
    pub job_id: JobId,
    pub document_id: String,
}

async fn start_job(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<Value>, JsonRejection>,
) -> Result<(StatusCode, Json<JobStarted>), ApiError> {
    let stored = load(&state, &id)?;
    let params = job_params(body, true)?;
    let request = GenerationRequest::new(
        params.kind,
        params.questions_per_page,
        params.pages.as_deref(),
        stored.document.page_count,
    )?;
    let job = GenerationJob::new(stored.document.id.clone(), request);
    let job_id = job.job_id.clone();
    state.claim(stored.document.content_hash, Busy::Job(job_id.clone()))?;

    let handle = Arc::new(JobHandle::new(job.clone()));
    state
        .jobs
        .lock()
        .expect("job table poisoned")
        .insert(job_id.clone(), handle.clone());
    info!(job = %job_id, document = %stored.document.id, "job started");
    tokio::spawn(drive_job(state.clone(), handle, stored.clone(), job));
    Ok((
        StatusCode::ACCEPTED,
        Json(JobStarted {
            job_id,
            document_id: stored.document.id.to_string(),
        }),
    ))
}

/// Runs a job, persisting each successful page before announcing it.
async fn drive_job(state: Arc<AppState>, handle: Arc<JobHandle>, stored: StoredDocument, job: GenerationJob) {
    let timestamp = sidecar_timestamp(state.client.config());
    let hash = stored.document.content_hash;
    let mut lost: BTreeSet<usize> = BTreeSet::new();
    let mut events = Box::pin(run_job(
        job,
        &stored.pages,
        state.client.clone(),
        state.dedup.clone(),
        state.options,
    ));
    while let Some(event) = events.next().await {
        match event {
            JobEvent::Page(mut result) => {
                if let Some(set) = result.questions().cloned() {
                    let store = state.store.clone();
                    let document = stored.document.clone();
                    let ts = timestamp.clone();
                    let saved = tokio::task::spawn_blocking(move || store.upsert_results(&document, &[set], &ts)).await;
                    if let Err(message) = saved.map_err(|e| e.to_string()).and_then(|r| r.map_err(|e| e.to_string())) {
                        warn!(page = result.page_index, error = %message, "could not persist page results");
                        lost.insert(result.page_index);
                        result.outcome = PageOutcome::Errored {
                            error: PageFailure {
                                code: "storage_failure".into(),
                                message: "generated questions could not be stored".into(),
                            },
                        };
                    }
                }
                handle.push(JobEvent::Page(result));
            }
            JobEvent::Done(mut job) => {
                for page in &lost {
                    job.mark(*page, PageStatus::Errored);
                }
                job.finish();
                info!(job = %job.job_id, status = ?job.status, "job finished");
                // Free the document before announcing completion so a client
                // reacting to `done` can start the next job immediately.
                state.release(&hash);
                handle.push(JobEvent::Done(job));
            }
        }
    }
}

async fn job_status(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<GenerationJob>, ApiError> {
    Ok(Json(state.job(&id)?.snapshot()))
}

fn sse_event(index: usize, event: &JobEvent) -> Event {
    let base = Event::default().id(index.to_string());
    let built = match event {
        JobEvent::Page(r) => base.event("page").json_data(r),
        JobEvent::Done(j) => base.event("done").json_data(j),
    };
    built.expect("job events always serialize")
}

/// Follows a job's event log from `start`, ending after the `done` event.
fn follow(handle: Arc<JobHandle>, start: usize) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = handle.version.subscribe();
    stream::unfold((handle, rx, start, false), |(handle, mut rx, cursor, finished)| async move {
        if finished {
            return None;
        }
        loop {
            if let Some(event) = handle.event(cursor) {
                let done = matches!(event, JobEvent::Done(_));
                return Some((Ok(sse_event(cursor, &event)), (handle, rx, cursor + 1, done)));
            }
            if rx.changed().await.is_err() {
                return None;
            }
        }
    })
}

async fn job_events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let handle = state.job(&id)?;
    // A reconnecting EventSource resumes after the last id it saw.
    let start = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<usize>().ok())
        .map_or(0, |last| last + 1);
    Ok(Sse::new(follow(handle, start)).keep_alive(KeepAlive::default()))
}

async fn regenerate(
    State(state): State<Arc<AppState>>,
    Path((id, page)): Path<(String, String)>,
    body: Result<Json<Value>, JsonRejection>,
) -> Result<Json<PageResult>, ApiError> {
    let stored = load(&state, &id)?;
    let page: usize = page
        .parse()
        .map_err(|_| ApiError::new(ErrorCode::PageOutOfRange, format!("invalid page index {page:?}")))?;
    let params = job_params(body, false)?;
    check_count(params.questions_per_page)?;
    GenerationRequest::new(params.kind, params.questions_per_page, Some(&[page]), stored.document.page_count)?;

    let hash = stored.document.content_hash;
    state.claim(hash, Busy::Regenerating)?;
    let result = regenerate_page(
        &state.store,
        &id,
        page,
        params.kind,
        params.questions_per_page,
        &state.client,
        &state.dedup,
        state.options,
    )
    .await;
    state.release(&hash);
    Ok(Json(result?))
}
