//! Per-page question generation for research papers.
//!
//! The pipeline: [`ingest`] splits a PDF into page texts, [`prompt`] builds
//! one instruction per page, [`provider`] sends it to a chat-completion
//! endpoint, [`parser`] turns the reply into labelled question/answer pairs,
//! [`dedup`] drops repeats across pages, and [`sidecar`] / [`store`] persist
//! the result next to the document. [`job`] ties the steps together.

pub mod dedup;
pub mod ingest;
pub mod job;
pub mod kind;
pub mod parser;
pub mod prompt;
pub mod provider;
pub mod sidecar;
pub mod store;

#[cfg(any(test, feature = "fixtures"))]
pub mod fixtures;

pub use dedup::DedupConfig;
pub use ingest::{extract_document, ContentHash, DocumentId, IngestError, PageText, SourceDocument};
pub use job::{run_job, GenerationJob, JobEvent, JobOptions, JobStatus, PageResult};
pub use kind::QuestionKind;
pub use parser::{parse_qa, PageQuestionSet, ParseIssue, QAPair};
pub use prompt::{build_prompt, GenerationRequest};
pub use provider::{CompletionClient, ProviderConfig, ProviderError};
pub use sidecar::{parse_sidecar, serialize_sidecar, Sidecar};
pub use store::DocumentStore;
