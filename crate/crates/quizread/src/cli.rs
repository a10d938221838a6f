//! `quizread gen` and `quizread serve`.
//!
//! Exit codes for `gen`: 0 when every page succeeded, 2 when some pages
//! failed (the sidecar holds the rest), 1 on invalid input or when no page
//! succeeded. Progress goes to stderr, the sidecar path to stdout.

use std::ffi::OsString;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use futures::StreamExt;
use tracing::info;
use tracing_subscriber::EnvFilter;

use quizread_core::dedup::DedupConfig;
use quizread_core::ingest::{extract_document, looks_like_pdf};
use quizread_core::job::{run_job, sidecar_timestamp, GenerationJob, JobEvent, JobStatus, PageResult};
use quizread_core::kind::QuestionKind;
use quizread_core::prompt::{check_count, parse_page_selection, GenerationRequest};
use quizread_core::provider::{CompletionClient, ProviderConfig, MOCK_SCHEME};
use quizread_core::sidecar::{serialize_sidecar, DocumentDescriptor, SIDECAR_EXTENSION};
use quizread_core::store::{sort_sets, write_atomic, DocumentStore};

use crate::api::{router, AppState};
use crate::config::{ConfigError, Settings};
use crate::error::{ApiError, ErrorCode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "quizread", version, about = "Generate per-page reading questions for PDF papers")]
pub struct Cli {
    /// TOML config file; QUIZREAD_* environment variables override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a question sidecar for one PDF.
    Gen(GenArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderChoice {
    /// Deterministic offline provider, for testing.
    Mock,
    /// Chat-completions HTTP endpoint.
    Http,
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    #[arg(long, value_enum)]
    pub provider: Option<ProviderChoice>,
    /// Endpoint URL (or `mock:?options` for the mock provider).
    #[arg(long, value_name = "URL")]
    pub provider_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, value_name = "N")]
    pub max_parallel: Option<usize>,
    /// Similarity at or above which a question counts as a repeat, in [0, 1].
    #[arg(long, value_name = "X")]
    pub dedup_threshold: Option<f64>,
    #[arg(long)]
    pub no_dedup: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    pub pdf: PathBuf,
    #[arg(long, default_value = "comprehension")]
    pub kind: String,
    /// Questions per page, 1 to 10.
    #[arg(long, default_value_t = 4, allow_negative_numbers = true)]
    pub count: i64,
    /// 0-based pages, e.g. `0-2,5`. Defaults to every page.
    #[arg(long, value_name = "RANGES")]
    pub pages: Option<String>,
    /// Output path; defaults to the input path plus `.quiz.json`.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Treat any formatting deviation in a reply as a page failure.
    #[arg(long)]
    pub strict_parse: bool,
    #[arg(long, short)]
    pub quiet: bool,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub addr: Option<SocketAddr>,
    #[arg(long, value_name = "DIR")]
    pub storage_dir: Option<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK };
        }
    };
    let quiet = matches!(&cli.command, Command::Gen(g) if g.quiet);
    init_tracing(&cli.command, quiet);
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return EXIT_FAILURE;
        }
    };
    let result = runtime.block_on(async {
        match cli.command {
            Command::Gen(args) => gen(cli.config.as_deref(), args).await,
            Command::Serve(args) => serve(cli.config.as_deref(), args).await.map(|()| EXIT_OK),
        }
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn init_tracing(command: &Command, quiet: bool) {
    let default = match command {
        Command::Serve(_) => "info",
        Command::Gen(_) if quiet => "error",
        Command::Gen(_) => "warn",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn config_error(e: ConfigError) -> ApiError {
    ApiError::new(ErrorCode::InvalidRequest, e.to_string())
}

fn load_settings(config: Option<&Path>) -> Result<Settings, ApiError> {
    Settings::load(config, |k| std::env::var(k).ok()).map_err(config_error)
}

/// Applies provider/dedup flags on top of file and environment settings.
fn resolve(settings: &Settings, flags: &ProviderArgs) -> Result<(ProviderConfig, DedupConfig), ApiError> {
    let mut settings = settings.clone();
    if let Some(url) = &flags.provider_url {
        settings.provider.endpoint_url = url.clone();
    }
    if let Some(model) = &flags.model {
        settings.provider.model_id = model.clone();
    }
    if let Some(n) = flags.max_parallel {
        settings.provider.max_parallel_calls = n;
    }
    if let Some(t) = flags.dedup_threshold {
        settings.dedup.threshold = t;
    }
    if flags.no_dedup {
        settings.dedup.enabled = false;
    }
    let is_mock = settings.provider.endpoint_url.starts_with(MOCK_SCHEME);
    match flags.provider {
        Some(ProviderChoice::Mock) if !is_mock => settings.provider.endpoint_url = MOCK_SCHEME.to_string(),
        Some(ProviderChoice::Http) if is_mock => {
            return Err(ApiError::new(
                ErrorCode::ProviderConfig,
                "--provider http needs an http(s) endpoint, not a mock: URL",
            ))
        }
        _ => {}
    }
    if settings.provider.endpoint_url.starts_with(MOCK_SCHEME) {
        settings.provider.api_key_var.clear();
    }
    let provider = settings
        .provider_config()
        .map_err(|e| ApiError::new(ErrorCode::ProviderConfig, e.to_string()))?;
    let dedup = settings.dedup_config().map_err(config_error)?;
    Ok((provider, dedup))
}

fn default_out(pdf: &Path) -> PathBuf {
    let mut s = pdf.as_os_str().to_owned();
    s.push(SIDECAR_EXTENSION);
    PathBuf::from(s)
}

fn progress_line(result: &PageResult, done: usize, total: usize) -> String {
    match (result.questions(), result.failure()) {
        (Some(set), _) => format!(
            "[{done}/{total}] page {}: {} question(s), {} repeat(s) dropped, {} issue(s) ({} ms)",
            result.page_index,
            set.pairs.len(),
            result.dropped.len(),
            set.issues.len(),
            result.latency_ms
        ),
        (None, Some(f)) => format!("[{done}/{total}] page {}: failed ({}): {}", result.page_index, f.code, f.message),
        (None, None) => format!("[{done}/{total}] page {}: no result", result.page_index),
    }
}

async fn gen(config: Option<&Path>, args: GenArgs) -> Result<i32, ApiError> {
    let settings = load_settings(config)?;
    let kind: QuestionKind = args.kind.parse()?;
    check_count(args.count)?;
    let pages = args
        .pages
        .as_deref()
        .map(parse_page_selection)
        .transpose()
        .map_err(|e| ApiError::new(ErrorCode::InvalidRequest, format!("--pages: {e}")))?;
    let (provider, dedup) = resolve(&settings, &args.provider)?;
    let mut options = settings.job_options();
    options.strict_parse |= args.strict_parse;

    let bytes = std::fs::read(&args.pdf).map_err(|e| {
        ApiError::new(ErrorCode::UnreadableDocument, format!("cannot read {}: {e}", args.pdf.display()))
    })?;
    if bytes.len() as u64 > settings.max_upload_bytes {
        return Err(ApiError::new(
            ErrorCode::PayloadTooLarge,
            format!("document exceeds the {}-byte limit", settings.max_upload_bytes),
        ));
    }
    if !looks_like_pdf(&bytes) {
        return Err(ApiError::new(ErrorCode::UnsupportedMediaType, "only PDF documents are supported"));
    }
    let filename = args
        .pdf
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "document.pdf".into());
    let (document, page_texts) = extract_document(&bytes, &filename)?;
    let request = GenerationRequest::new(kind, args.count, pages.as_deref(), document.page_count)?;
    let client = CompletionClient::new(provider).map_err(|e| ApiError::new(ErrorCode::ProviderConfig, e.to_string()))?;
    let timestamp = sidecar_timestamp(client.config());

    let total = request.page_range().len();
    let job = GenerationJob::new(document.id.clone(), request);
    let mut events = Box::pin(run_job(job, &page_texts, client, dedup, options));
    let mut sets = Vec::new();
    let mut finished = None;
    let mut done = 0;
    while let Some(event) = events.next().await {
        match event {
            JobEvent::Page(result) => {
                done += 1;
                if !args.quiet {
                    eprintln!("{}", progress_line(&result, done, total));
                }
                if let Some(set) = result.questions() {
                    sets.push(set.clone());
                }
            }
            JobEvent::Done(job) => finished = Some(job),
        }
    }
    let job = finished.expect("job stream always ends with Done");
    if !args.quiet {
        eprintln!("job {}: {:?}", job.job_id, job.status);
    }
    if job.status == JobStatus::Failed {
        return Err(ApiError::new(ErrorCode::Internal, "no page produced questions; nothing written"));
    }

    sort_sets(&mut sets);
    let text = serialize_sidecar(&DocumentDescriptor::from(&document), &timestamp, &sets)
        .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?;
    let out = args.out.clone().unwrap_or_else(|| default_out(&args.pdf));
    write_atomic(&out, text.as_bytes()).map_err(|e| {
        ApiError::new(ErrorCode::StorageFailure, format!("cannot write {}: {e}", out.display()))
    })?;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{}", out.display());
    Ok(match job.status {
        JobStatus::Completed => EXIT_OK,
        _ => EXIT_PARTIAL,
    })
}

async fn serve(config: Option<&Path>, args: ServeArgs) -> Result<(), ApiError> {
    let mut settings = load_settings(config)?;
    if let Some(addr) = args.addr {
        settings.addr = addr;
    }
    if let Some(dir) = args.storage_dir {
        settings.storage_dir = dir;
    }
    let (provider, dedup) = resolve(&settings, &args.provider)?;
    let client = CompletionClient::new(provider).map_err(|e| ApiError::new(ErrorCode::ProviderConfig, e.to_string()))?;
    let store = DocumentStore::open(&settings.storage_dir)?;
    let state = Arc::new(AppState::new(
        store,
        client,
        dedup,
        settings.job_options(),
        settings.ingest_limits(),
    ));
    let listener = tokio::net::TcpListener::bind(settings.addr)
        .await
        .map_err(|e| ApiError::new(ErrorCode::Internal, format!("cannot listen on {}: {e}", settings.addr)))?;
    let addr = listener.local_addr().unwrap_or(settings.addr);
    info!(%addr, storage = %settings.storage_dir.display(), "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ApiError::new(ErrorCode::Internal, format!("server error: {e}")))
}
