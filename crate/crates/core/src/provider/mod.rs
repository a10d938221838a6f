//! Chat-completion providers.
//!
//! A [`CompletionClient`] wraps one backend (HTTP or the offline mock) with
//! a timeout, retry with jittered exponential backoff, and a limiter that
//! caps in-flight requests. Build one client per process and share it; the
//! limiter lives inside it.

mod http;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;
use tracing::{debug, warn};

pub use mock::MockOptions;

pub const MOCK_SCHEME: &str = "mock:";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";
pub const DEFAULT_CREDENTIAL_VAR: &str = "OPENAI_API_KEY";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider timed out after {attempts} attempts")]
    ProviderTimeout { attempts: u32 },
    #[error("provider unavailable after {attempts} attempts: {last}")]
    ProviderUnavailable { attempts: u32, last: String },
    #[error("provider rejected the request (HTTP {status}): {message}")]
    ProviderRejected { status: u16, message: String },
    #[error("provider response could not be read: {0}")]
    MalformedResponse(String),
    #[error("credential environment variable {0} is not set")]
    CredentialMissing(String),
    #[error("invalid provider configuration: {0}")]
    InvalidConfig(String),
}

/// Where and how to reach the completion service. Holds the *name* of the
/// environment variable with the API key, never the key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub model_id: String,
    pub credential_ref: Option<String>,
    #[serde(with = "secs_f64")]
    pub timeout: Duration,
    pub max_retries: u32,
    pub max_parallel_calls: usize,
    pub temperature: f64,
    #[serde(with = "secs_f64")]
    pub backoff_base: Duration,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint_url: DEFAULT_ENDPOINT.to_string(),
            model_id: DEFAULT_MODEL.to_string(),
            credential_ref: Some(DEFAULT_CREDENTIAL_VAR.to_string()),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            max_parallel_calls: 2,
            temperature: 0.7,
            backoff_base: Duration::from_secs(1),
        }
    }
}

impl ProviderConfig {
    /// Offline deterministic provider; `options` is the query part of a
    /// `mock:` URL, e.g. `delay_ms=200&fail_on=PAGE-1`.
    pub fn mock(options: &str) -> Self {
        let endpoint_url = if options.is_empty() {
            MOCK_SCHEME.to_string()
        } else {
            format!("{MOCK_SCHEME}?{options}")
        };
        Self {
            endpoint_url,
            model_id: "mock".to_string(),
            credential_ref: None,
            ..Self::default()
        }
    }

    pub fn is_mock(&self) -> bool {
        self.endpoint_url.starts_with(MOCK_SCHEME)
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.max_parallel_calls < 1 {
            return Err(ProviderError::InvalidConfig("max_parallel_calls must be at least 1".into()));
        }
        if self.timeout.is_zero() {
            return Err(ProviderError::InvalidConfig("timeout must be positive".into()));
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidConfig("temperature must be within [0, 2]".into()));
        }
        if !self.is_mock() {
            let url = reqwest::Url::parse(&self.endpoint_url)
                .map_err(|e| ProviderError::InvalidConfig(format!("endpoint_url: {e}")))?;
            if !matches!(url.scheme(), "http" | "https") {
                return Err(ProviderError::InvalidConfig(format!(
                    "unsupported endpoint scheme {:?}",
                    url.scheme()
                )));
            }
        }
        Ok(())
    }
}

mod secs_f64 {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// Diagnostics attached to a completion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderMeta {
    pub model_id: String,
    pub latency_ms: u64,
    pub attempts: u32,
    pub backoff_ms: Vec<u64>,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCompletion {
    pub text: String,
    pub provider_meta: ProviderMeta,
}

/// Outcome of one request attempt, before retry policy is applied.
#[derive(Debug)]
pub(crate) enum AttemptError {
    Timeout,
    /// 429, 5xx, or a connection-level failure.
    Transient(String),
    Rejected { status: u16, message: String },
    Malformed(String),
    Credential(String),
}

pub(crate) struct AttemptOk {
    text: String,
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

enum Backend {
    Http(http::HttpBackend),
    Mock(mock::MockBackend),
}

#[derive(Debug, Default)]
struct InFlight {
    current: AtomicUsize,
    peak: AtomicUsize,
}

struct InFlightGuard<'a>(&'a InFlight);

impl<'a> InFlightGuard<'a> {
    fn enter(gauge: &'a InFlight) -> Self {
        let now = gauge.current.fetch_add(1, Ordering::SeqCst) + 1;
        gauge.peak.fetch_max(now, Ordering::SeqCst);
        Self(gauge)
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        self.0.current.fetch_sub(1, Ordering::SeqCst);
    }
}

struct Inner {
    config: ProviderConfig,
    backend: Backend,
    limiter: Semaphore,
    in_flight: InFlight,
}

/// Shared handle to a configured provider. Cloning is cheap and clones share
/// the parallelism limit.
#[derive(Clone)]
pub struct CompletionClient {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for CompletionClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CompletionClient")
            .field("endpoint_url", &self.inner.config.endpoint_url)
            .field("model_id", &self.inner.config.model_id)
            .finish_non_exhaustive()
    }
}

impl CompletionClient {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        config.validate()?;
        let backend = if config.is_mock() {
            Backend::Mock(mock::MockBackend::new(MockOptions::parse(
                &config.endpoint_url[MOCK_SCHEME.len()..],
            )?))
        } else {
            Backend::Http(http::HttpBackend::new(&config)?)
        };
        Ok(Self {
            inner: Arc::new(Inner {
                limiter: Semaphore::new(config.max_parallel_calls),
                config,
                backend,
                in_flight: InFlight::default(),
            }),
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.inner.config
    }

    /// Highest number of simultaneous in-flight attempts seen so far.
    pub fn peak_in_flight(&self) -> usize {
        self.inner.in_flight.peak.load(Ordering::SeqCst)
    }

    pub fn in_flight(&self) -> usize {
        self.inner.in_flight.current.load(Ordering::SeqCst)
    }

    /// Sends `prompt` and returns the provider's text, retrying transient
    /// failures (timeouts, HTTP 429/5xx, connection errors).
    pub async fn complete(&self, prompt: &str) -> Result<RawCompletion, ProviderError> {
        let config = &self.inner.config;
        let started = Instant::now();
        let mut backoff_ms = Vec::new();
        let mut attempt: u32 = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self
                    .inner
                    .limiter
                    .acquire()
                    .await
                    .expect("limiter is never closed");
                let _guard = InFlightGuard::enter(&self.inner.in_flight);
                self.attempt(prompt).await
            };

            let transient = match result {
                Ok(ok) => {
                    debug!(attempt, "completion succeeded");
                    return Ok(RawCompletion {
                        text: ok.text,
                        provider_meta: ProviderMeta {
                            model_id: config.model_id.clone(),
                            latency_ms: started.elapsed().as_millis() as u64,
                            attempts: attempt,
                            backoff_ms,
                            prompt_tokens: ok.prompt_tokens,
                            completion_tokens: ok.completion_tokens,
                        },
                    });
                }
                Err(AttemptError::Rejected { status, message }) => {
                    return Err(ProviderError::ProviderRejected { status, message })
                }
                Err(AttemptError::Malformed(msg)) => return Err(ProviderError::MalformedResponse(msg)),
                Err(AttemptError::Credential(var)) => return Err(ProviderError::CredentialMissing(var)),
                Err(e) => e,
            };

            if attempt > config.max_retries {
                warn!(attempts = attempt, "provider retries exhausted");
                return Err(match transient {
                    AttemptError::Timeout => ProviderError::ProviderTimeout { attempts: attempt },
                    AttemptError::Transient(last) => ProviderError::ProviderUnavailable {
                        attempts: attempt,
                        last,
                    },
                    _ => unreachable!("non-transient errors return early"),
                });
            }
            let delay = backoff_delay(config.backoff_base, attempt - 1);
            warn!(attempt, delay_ms = delay.as_millis() as u64, failure = ?transient, "transient provider failure, backing off");
            backoff_ms.push(delay.as_millis() as u64);
            tokio::time::sleep(delay).await;
        }
    }

    async fn attempt(&self, prompt: &str) -> Result<AttemptOk, AttemptError> {
        let config = &self.inner.config;
        match &self.inner.backend {
            Backend::Http(b) => b.send(config, prompt).await,
            Backend::Mock(m) => {
                match tokio::time::timeout(config.timeout, m.respond(prompt)).await {
                    Ok(r) => r,
                    Err(_) => Err(AttemptError::Timeout),
                }
            }
        }
    }
}

/// `base * 2^retry`, scaled by a jitter factor in [0.75, 1.0] so successive
/// delays stay strictly increasing.
pub fn backoff_delay(base: Duration, retry: u32) -> Duration {
    let factor = 2f64.powi(retry.min(20) as i32);
    let jitter = rand::thread_rng().gen_range(0.75..=1.0);
    base.mul_f64(factor * jitter)
}

/// Convenience wrapper: one-shot completion with a fresh client.
pub async fn complete(prompt: &str, config: &ProviderConfig) -> Result<RawCompletion, ProviderError> {
    CompletionClient::new(config.clone())?.complete(prompt).await
}
