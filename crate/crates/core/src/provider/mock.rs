//! Deterministic offline provider.
//!
//! Replies are a pure function of the prompt: the requested count and label
//! prefix are read back from the prompt, and question wording is derived
//! from a SHA-256 of the prompt. Query options on the `mock:` URL rig
//! behaviour for tests:
//!
//! * `delay_ms=N` — sleep before replying
//! * `fail_on=a,b` — reject prompts containing any listed substring
//! * `timeout_on=a,b` — never reply to matching prompts (hits the timeout)
//! * `bulleted_on=a,b` — reply with unlabeled bullet questions, no answers
//! * `repeat=N` — the first N questions are identical for every prompt

use std::time::Duration;

use regex::Regex;
use sha2::{Digest, Sha256};

use super::{AttemptError, AttemptOk, ProviderError};
use crate::prompt::ANSWER_MARKER;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MockOptions {
    pub delay: Duration,
    pub fail_on: Vec<String>,
    pub timeout_on: Vec<String>,
    pub bulleted_on: Vec<String>,
    pub repeat: usize,
}

impl MockOptions {
    /// Parses the part of a mock URL after `mock:`.
    pub fn parse(rest: &str) -> Result<Self, ProviderError> {
        let query = rest.trim_start_matches("//").trim_start_matches('?');
        let mut opts = MockOptions::default();
        for pair in query.split('&').filter(|p| !p.is_empty()) {
            let (key, value) = pair.split_once('=').unwrap_or((pair, ""));
            let list = || value.split(',').filter(|s| !s.is_empty()).map(String::from).collect();
            match key {
                "delay_ms" => {
                    let ms = value
                        .parse()
                        .map_err(|_| ProviderError::InvalidConfig(format!("mock delay_ms={value:?}")))?;
                    opts.delay = Duration::from_millis(ms);
                }
                "fail_on" => opts.fail_on = list(),
                "timeout_on" => opts.timeout_on = list(),
                "bulleted_on" => opts.bulleted_on = list(),
                "repeat" => {
                    opts.repeat = value
                        .parse()
                        .map_err(|_| ProviderError::InvalidConfig(format!("mock repeat={value:?}")))?;
                }
                other => {
                    return Err(ProviderError::InvalidConfig(format!("unknown mock option {other:?}")))
                }
            }
        }
        Ok(opts)
    }
}

pub(crate) struct MockBackend {
    options: MockOptions,
    count_re: Regex,
    prefix_re: Regex,
}

impl MockBackend {
    pub(crate) fn new(options: MockOptions) -> Self {
        Self {
            options,
            count_re: Regex::new(r"^Write (\d+) ").expect("static regex"),
            prefix_re: Regex::new(r"\(like ([A-Z])1,").expect("static regex"),
        }
    }

    pub(crate) async fn respond(&self, prompt: &str) -> Result<AttemptOk, AttemptError> {
        let matches = |list: &[String]| list.iter().any(|s| prompt.contains(s.as_str()));
        if matches(&self.options.timeout_on) {
            std::future::pending::<()>().await;
        }
        if !self.options.delay.is_zero() {
            tokio::time::sleep(self.options.delay).await;
        }
        if matches(&self.options.fail_on) {
            return Err(AttemptError::Rejected {
                status: 400,
                message: "mock provider rigged to fail".into(),
            });
        }

        let n: usize = self
            .count_re
            .captures(prompt)
            .and_then(|c| c[1].parse().ok())
            .unwrap_or(3);
        let prefix = self
            .prefix_re
            .captures(prompt)
            .map(|c| c[1].to_string())
            .unwrap_or_else(|| "C".to_string());

        let text = if matches(&self.options.bulleted_on) {
            bulleted_reply(prompt, n)
        } else {
            labeled_reply(prompt, n, &prefix, self.options.repeat)
        };
        Ok(AttemptOk {
            text,
            prompt_tokens: None,
            completion_tokens: None,
        })
    }
}

fn tokens(seed: &[u8], i: usize) -> Vec<String> {
    let digest = Sha256::new().chain_update(seed).chain_update(i.to_le_bytes()).finalize();
    digest.chunks(2).take(5).map(hex::encode).collect()
}

fn labeled_reply(prompt: &str, n: usize, prefix: &str, repeat: usize) -> String {
    let prompt_seed = Sha256::digest(prompt.as_bytes());
    let mut out = String::new();
    for i in 1..=n {
        let seed: &[u8] = if i <= repeat { b"repeated" } else { &prompt_seed };
        let t = tokens(seed, i);
        out.push_str(&format!(
            "{prefix}{i}. What does the passage establish about point {} {} {} {}?\n{ANSWER_MARKER} It links point {} to the argument on this page (ref {}).\n",
            t[0], t[1], t[2], t[3], t[0], t[4]
        ));
    }
    out
}

fn bulleted_reply(prompt: &str, n: usize) -> String {
    let seed = Sha256::digest(prompt.as_bytes());
    (1..=n)
        .map(|i| {
            let t = tokens(&seed, i);
            format!("- How is item {} {} related to {}?\n", t[0], t[1], t[2])
        })
        .collect()
}
