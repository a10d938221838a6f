use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{AttemptError, AttemptOk, ProviderConfig, ProviderError};

const MAX_ERROR_MESSAGE: usize = 200;

pub(crate) struct HttpBackend {
    client: reqwest::Client,
}

impl HttpBackend {
    pub(crate) fn new(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::InvalidConfig(format!("http client: {e}")))?;
        Ok(Self { client })
    }

    pub(crate) async fn send(&self, config: &ProviderConfig, prompt: &str) -> Result<AttemptOk, AttemptError> {
        let credential = match &config.credential_ref {
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Some(v),
                _ => return Err(AttemptError::Credential(var.clone())),
            },
            None => None,
        };

        let body = json!({
            "model": config.model_id,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": config.temperature,
        });
        let mut request = self.client.post(&config.endpoint_url).json(&body);
        if let Some(key) = &credential {
            request = request.bearer_auth(key);
        }

        let response = match request.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Err(AttemptError::Timeout),
            Err(e) => return Err(AttemptError::Transient(describe(&e))),
        };
        let status = response.status();
        let text = match response.text().await {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Err(AttemptError::Timeout),
            Err(e) => return Err(AttemptError::Transient(describe(&e))),
        };

        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            return Err(AttemptError::Transient(format!("HTTP {}", status.as_u16())));
        }
        if !status.is_success() {
            return Err(AttemptError::Rejected {
                status: status.as_u16(),
                message: redact(&error_message(&text), credential.as_deref()),
            });
        }
        parse_chat_response(&text)
    }
}

fn describe(e: &reqwest::Error) -> String {
    // Avoid echoing URLs, which may embed credentials in query strings.
    if e.is_connect() {
        "connection failed".to_string()
    } else if e.is_body() || e.is_decode() {
        "response body could not be read".to_string()
    } else {
        "request failed".to_string()
    }
}

fn error_message(body: &str) -> String {
    let msg = serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| {
            v.pointer("/error/message")
                .and_then(Value::as_str)
                .map(str::to_string)
        })
        .unwrap_or_else(|| body.trim().to_string());
    msg.chars().take(MAX_ERROR_MESSAGE).collect()
}

fn redact(message: &str, credential: Option<&str>) -> String {
    match credential {
        Some(key) if !key.is_empty() => message.replace(key, "[redacted]"),
        _ => message.to_string(),
    }
}

pub(crate) fn parse_chat_response(body: &str) -> Result<AttemptOk, AttemptError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| AttemptError::Malformed(format!("invalid JSON: {e}")))?;
    let text = value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| AttemptError::Malformed("missing choices[0].message.content".into()))?;
    Ok(AttemptOk {
        text: text.to_string(),
        prompt_tokens: value.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        completion_tokens: value.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_first_choice() {
        let ok = parse_chat_response(
            r#"{"choices":[{"message":{"role":"assistant","content":"C1. Q?\nAnswer: A."}}],"usage":{"prompt_tokens":12,"completion_tokens":7}}"#,
        )
        .unwrap();
        assert_eq!(ok.text, "C1. Q?\nAnswer: A.");
        assert_eq!(ok.prompt_tokens, Some(12));
        assert_eq!(ok.completion_tokens, Some(7));
    }

    #[test]
    fn malformed_bodies() {
        assert!(matches!(parse_chat_response("nope"), Err(AttemptError::Malformed(_))));
        assert!(matches!(parse_chat_response(r#"{"choices":[]}"#), Err(AttemptError::Malformed(_))));
    }

    #[test]
    fn error_messages_are_trimmed_and_redacted() {
        let body = r#"{"error":{"message":"bad key sk-123 supplied"}}"#;
        assert_eq!(redact(&error_message(body), Some("sk-123")), "bad key [redacted] supplied");
        let long = "x".repeat(1000);
        assert_eq!(error_message(&long).len(), MAX_ERROR_MESSAGE);
    }
}
