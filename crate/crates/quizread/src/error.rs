//! Error responses shared by the HTTP API and the CLI.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use quizread_core::ingest::IngestError;
use quizread_core::job::JobError;
use quizread_core::kind::UnknownKind;
use quizread_core::prompt::PromptError;
use quizread_core::store::StoreError;

/// Closed set of machine-readable error codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidRequest,
    CountOutOfRange,
    UnsupportedKind,
    PageOutOfRange,
    EmptyPageRange,
    InvalidFilter,
    UnsupportedMediaType,
    PayloadTooLarge,
    UnreadableDocument,
    EncryptedDocument,
    EmptyDocument,
    DocumentNotFound,
    JobNotFound,
    NotFound,
    JobAlreadyRunning,
    StorageFailure,
    ProviderConfig,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        use ErrorCode::*;
        match self {
            InvalidRequest | CountOutOfRange | UnsupportedKind | PageOutOfRange | EmptyPageRange | InvalidFilter => {
                StatusCode::BAD_REQUEST
            }
            UnsupportedMediaType => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            PayloadTooLarge => StatusCode::PAYLOAD_TOO_LARGE,
            UnreadableDocument | EncryptedDocument | EmptyDocument => StatusCode::UNPROCESSABLE_ENTITY,
            DocumentNotFound | JobNotFound | NotFound => StatusCode::NOT_FOUND,
            JobAlreadyRunning => StatusCode::CONFLICT,
            StorageFailure | ProviderConfig | Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn as_str(self) -> &'static str {
        use ErrorCode::*;
        match self {
            InvalidRequest => "invalid_request",
            CountOutOfRange => "count_out_of_range",
            UnsupportedKind => "unsupported_kind",
            PageOutOfRange => "page_out_of_range",
            EmptyPageRange => "empty_page_range",
            InvalidFilter => "invalid_filter",
            UnsupportedMediaType => "unsupported_media_type",
            PayloadTooLarge => "payload_too_large",
            UnreadableDocument => "unreadable_document",
            EncryptedDocument => "encrypted_document",
            EmptyDocument => "empty_document",
            DocumentNotFound => "document_not_found",
            JobNotFound => "job_not_found",
            NotFound => "not_found",
            JobAlreadyRunning => "job_already_running",
            StorageFailure => "storage_failure",
            ProviderConfig => "provider_config",
            Internal => "internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{}: {message}", code.as_str())]
pub struct ApiError {
    pub http_status: u16,
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            http_status: code.status().as_u16(),
            code,
            message: message.into(),
        }
    }

    pub fn document_not_found(id: &str) -> Self {
        Self::new(ErrorCode::DocumentNotFound, format!("document {id} not found"))
    }
}

impl From<PromptError> for ApiError {
    fn from(e: PromptError) -> Self {
        let code = match e {
            PromptError::UnsupportedKind(_) => ErrorCode::UnsupportedKind,
            PromptError::CountOutOfRange(_) => ErrorCode::CountOutOfRange,
            PromptError::EmptyPage => ErrorCode::InvalidRequest,
            PromptError::EmptyPageRange => ErrorCode::EmptyPageRange,
            PromptError::PageOutOfRange { .. } => ErrorCode::PageOutOfRange,
        };
        Self::new(code, e.to_string())
    }
}

impl From<UnknownKind> for ApiError {
    fn from(e: UnknownKind) -> Self {
        Self::new(ErrorCode::UnsupportedKind, e.to_string())
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        let code = match e {
            IngestError::UnreadableDocument(_) => ErrorCode::UnreadableDocument,
            IngestError::EncryptedDocument => ErrorCode::EncryptedDocument,
            IngestError::EmptyDocument => ErrorCode::EmptyDocument,
            IngestError::PageOutOfRange { .. } => ErrorCode::PageOutOfRange,
        };
        Self::new(code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(id) => Self::document_not_found(&id),
            other => {
                tracing::error!(error = %other, "storage failure");
                Self::new(ErrorCode::StorageFailure, "document storage failed")
            }
        }
    }
}

impl From<JobError> for ApiError {
    fn from(e: JobError) -> Self {
        match e {
            JobError::JobRejected(p) => p.into(),
            JobError::Store(s) => s.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}
