#![allow(dead_code)]

use std::path::PathBuf;
use std::process::Output;
use std::sync::Arc;
use std::time::Instant;

use futures::StreamExt;
use reqwest::multipart::{Form, Part};
use serde_json::Value;

use quizread::api::{router, AppState};
use quizread_core::dedup::DedupConfig;
use quizread_core::ingest::{ContentHash, IngestLimits};
use quizread_core::job::JobOptions;
use quizread_core::provider::{CompletionClient, ProviderConfig};
use quizread_core::store::DocumentStore;

pub struct Server {
    pub base: String,
    pub state: Arc<AppState>,
    pub dir: tempfile::TempDir,
    pub http: reqwest::Client,
}

pub struct ServerOptions {
    pub mock: String,
    pub parallel: usize,
    pub max_upload_bytes: u64,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            mock: String::new(),
            parallel: 2,
            max_upload_bytes: IngestLimits::default().max_upload_bytes,
        }
    }
}

pub async fn server(options: ServerOptions) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let mut provider = ProviderConfig::mock(&options.mock);
    provider.max_parallel_calls = options.parallel;
    let limits = IngestLimits {
        max_upload_bytes: options.max_upload_bytes,
        ..IngestLimits::default()
    };
    let state = Arc::new(AppState::new(
        DocumentStore::open(dir.path().join("store")).unwrap(),
        CompletionClient::new(provider).unwrap(),
        DedupConfig::default(),
        JobOptions::default(),
        limits,
    ));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let app = router(state.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    Server {
        base,
        state,
        dir,
        http: reqwest::Client::new(),
    }
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn upload_as(&self, bytes: Vec<u8>, filename: &str, mime: &str) -> (u16, Value) {
        let part = Part::bytes(bytes).file_name(filename.to_string()).mime_str(mime).unwrap();
        let resp = self
            .http
            .post(self.url("/api/documents"))
            .multipart(Form::new().part("file", part))
            .send()
            .await
            .unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap())
    }

    pub async fn upload(&self, bytes: Vec<u8>, filename: &str) -> (u16, Value) {
        self.upload_as(bytes, filename, "application/pdf").await
    }

    pub async fn post_json(&self, path: &str, body: Value) -> (u16, Value) {
        let resp = self.http.post(self.url(path)).json(&body).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap())
    }

    pub async fn get_json(&self, path: &str) -> (u16, Value) {
        let resp = self.http.get(self.url(path)).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap())
    }

    pub async fn start_job(&self, doc: &str, body: Value) -> (u16, Value) {
        self.post_json(&format!("/api/documents/{doc}/jobs"), body).await
    }

    pub async fn events(&self, job: &str) -> Vec<SseEvent> {
        self.events_from(job, None).await
    }

    pub async fn events_from(&self, job: &str, last_event_id: Option<usize>) -> Vec<SseEvent> {
        let mut req = self.http.get(self.url(&format!("/api/jobs/{job}/events")));
        if let Some(id) = last_event_id {
            req = req.header("Last-Event-ID", id.to_string());
        }
        read_sse(req.send().await.unwrap(), usize::MAX).await
    }

    /// Path of the stored sidecar for a content hash.
    pub fn stored_sidecar(&self, content_hash: &str) -> PathBuf {
        let hash = ContentHash::from_hex(content_hash).expect("hex content hash");
        self.state.store().sidecar_path(&hash)
    }
}

#[derive(Debug, Clone)]
pub struct SseEvent {
    pub id: Option<String>,
    pub event: String,
    pub data: Value,
    pub at: Instant,
}

/// Reads events until the stream ends, a `done` event arrives, or `limit`
/// events were read.
pub async fn read_sse(resp: reqwest::Response, limit: usize) -> Vec<SseEvent> {
    assert_eq!(resp.status(), 200);
    let content_type = resp.headers()["content-type"].to_str().unwrap().to_string();
    assert!(content_type.starts_with("text/event-stream"), "{content_type}");
    let mut body = resp.bytes_stream();
    let mut buf = String::new();
    let mut out = Vec::new();
    while let Some(chunk) = body.next().await {
        buf.push_str(std::str::from_utf8(&chunk.unwrap()).unwrap());
        while let Some(end) = buf.find("\n\n") {
            let block: String = buf.drain(..end + 2).collect();
            let (mut id, mut event, mut data) = (None, String::from("message"), String::new());
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("id:") {
                    id = Some(v.trim().to_string());
                } else if let Some(v) = line.strip_prefix("event:") {
                    event = v.trim().to_string();
                } else if let Some(v) = line.strip_prefix("data:") {
                    data.push_str(v.strip_prefix(' ').unwrap_or(v));
                }
            }
            if data.is_empty() {
                continue; // keep-alive comment
            }
            let done = event == "done";
            out.push(SseEvent {
                id,
                event,
                data: serde_json::from_str(&data).unwrap(),
                at: Instant::now(),
            });
            if done || out.len() >= limit {
                return out;
            }
        }
    }
    out
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_quizread")
}

/// Runs the CLI binary with a clean `QUIZREAD_*` environment.
pub fn run_cli(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = std::process::Command::new(bin());
    for (k, _) in std::env::vars() {
        if k.starts_with("QUIZREAD_") || k == "SOURCE_DATE_EPOCH" || k == "RUST_LOG" {
            cmd.env_remove(k);
        }
    }
    cmd.args(args).envs(env.iter().copied()).output().unwrap()
}
