//! Settings shared by `serve` and `gen`.
//!
//! Precedence, lowest to highest: built-in defaults, the TOML config file,
//! `QUIZREAD_*` environment variables, command-line flags.
//!
//! ```toml
//! addr = "127.0.0.1:8080"
//! storage_dir = "quizread-data"
//! max_upload_bytes = 52428800
//! page_char_budget = 12000
//! strict_parse = false
//!
//! [provider]
//! endpoint_url = "https://api.openai.com/v1/chat/completions"
//! model_id = "gpt-4o-mini"
//! api_key_var = "OPENAI_API_KEY"
//! timeout_secs = 60
//! max_retries = 3
//! max_parallel_calls = 2
//! temperature = 0.7
//!
//! [dedup]
//! enabled = true
//! threshold = 0.6
//! ```

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use quizread_core::dedup::{DedupConfig, DEFAULT_THRESHOLD};
use quizread_core::ingest::{IngestLimits, DEFAULT_MAX_UPLOAD_BYTES, DEFAULT_PAGE_CHAR_BUDGET};
use quizread_core::job::JobOptions;
use quizread_core::provider::{ProviderConfig, DEFAULT_CREDENTIAL_VAR, DEFAULT_ENDPOINT, DEFAULT_MODEL};

pub const ENV_ADDR: &str = "QUIZREAD_ADDR";
pub const ENV_STORAGE_DIR: &str = "QUIZREAD_STORAGE_DIR";
pub const ENV_PROVIDER_URL: &str = "QUIZREAD_PROVIDER_URL";
pub const ENV_MODEL: &str = "QUIZREAD_MODEL";
pub const ENV_API_KEY_VAR: &str = "QUIZREAD_API_KEY_VAR";
pub const ENV_DEDUP_THRESHOLD: &str = "QUIZREAD_DEDUP_THRESHOLD";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config file {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid value for {key}: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub addr: SocketAddr,
    pub storage_dir: PathBuf,
    pub max_upload_bytes: u64,
    pub page_char_budget: usize,
    pub strict_parse: bool,
    pub provider: ProviderSettings,
    pub dedup: DedupSettings,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    pub endpoint_url: String,
    pub model_id: String,
    /// Name of the environment variable holding the API key. Empty means
    /// no key is sent.
    pub api_key_var: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_parallel_calls: usize,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupSettings {
    pub enabled: bool,
    pub threshold: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            storage_dir: PathBuf::from("quizread-data"),
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            page_char_budget: DEFAULT_PAGE_CHAR_BUDGET,
            strict_parse: false,
            provider: ProviderSettings::default(),
            dedup: DedupSettings::default(),
        }
    }
}

impl Default for ProviderSettings {
    fn default() -> Self {
        let base = ProviderConfig::default();
        Self {
            endpoint_url: DEFAULT_ENDPOINT.into(),
            model_id: DEFAULT_MODEL.into(),
            api_key_var: DEFAULT_CREDENTIAL_VAR.into(),
            timeout_secs: base.timeout.as_secs_f64(),
            max_retries: base.max_retries,
            max_parallel_calls: base.max_parallel_calls,
            temperature: base.temperature,
        }
    }
}

impl Default for DedupSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

fn invalid(key: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        message: message.to_string(),
    }
}

impl Settings {
    /// Defaults, then `file` (if any), then the environment as seen through
    /// `env`.
    pub fn load(file: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut settings = match file {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        settings.apply_env(env)?;
        Ok(settings)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = env(ENV_ADDR) {
            self.addr = v.parse().map_err(|e| invalid(ENV_ADDR, e))?;
        }
        if let Some(v) = env(ENV_STORAGE_DIR) {
            self.storage_dir = PathBuf::from(v);
        }
        if let Some(v) = env(ENV_PROVIDER_URL) {
            self.provider.endpoint_url = v;
        }
        if let Some(v) = env(ENV_MODEL) {
            self.provider.model_id = v;
        }
        if let Some(v) = env(ENV_API_KEY_VAR) {
            self.provider.api_key_var = v;
        }
        if let Some(v) = env(ENV_DEDUP_THRESHOLD) {
            self.dedup.threshold = v.trim().parse().map_err(|e| invalid(ENV_DEDUP_THRESHOLD, e))?;
        }
        Ok(())
    }

    pub fn provider_config(&self) -> Result<ProviderConfig, ConfigError> {
        let p = &self.provider;
        if !(p.timeout_secs.is_finite() && p.timeout_secs > 0.0) {
            return Err(invalid("provider.timeout_secs", "must be a positive number"));
        }
        let config = ProviderConfig {
            endpoint_url: p.endpoint_url.clone(),
            model_id: p.model_id.clone(),
            credential_ref: Some(p.api_key_var.clone()).filter(|v| !v.is_empty()),
            timeout: Duration::from_secs_f64(p.timeout_secs),
            max_retries: p.max_retries,
            max_parallel_calls: p.max_parallel_calls,
            temperature: p.temperature,
            ..ProviderConfig::default()
        };
        config.validate().map_err(|e| invalid("provider", e))?;
        Ok(config)
    }

    pub fn dedup_config(&self) -> Result<DedupConfig, ConfigError> {
        let mut config = DedupConfig::with_threshold(self.dedup.threshold).map_err(|e| invalid("dedup.threshold", e))?;
        config.enabled = self.dedup.enabled;
        Ok(config)
    }

    pub fn ingest_limits(&self) -> IngestLimits {
        IngestLimits {
            max_upload_bytes: self.max_upload_bytes,
            page_char_budget: self.page_char_budget,
        }
    }

    pub fn job_options(&self) -> JobOptions {
        JobOptions {
            page_char_budget: self.page_char_budget,
            strict_parse: self.strict_parse,
        }
    }
}
