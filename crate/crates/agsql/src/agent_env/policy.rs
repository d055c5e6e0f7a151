//! Policy adapters: anything that can turn a conversation into the next
//! assistant response. No model lives in this crate; rollouts either replay
//! scripts (tests, offline evaluation) or call out to an external
//! text-generation endpoint.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Conversation, Role};

/// Environment variable naming the remote policy endpoint.
pub const POLICY_URL_ENV: &str = "AGSQL_POLICY_URL";
/// Environment variable with the remote policy deadline in milliseconds.
pub const POLICY_TIMEOUT_ENV: &str = "AGSQL_POLICY_TIMEOUT_MS";

const DEFAULT_POLICY_TIMEOUT_MS: u64 = 60_000;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("policy deadline exceeded: {0}")]
    Deadline(String),
    #[error("policy request failed: {0}")]
    Request(String),
    #[error("policy returned a malformed response: {0}")]
    BadResponse(String),
    #[error("scripted policy has no script")]
    EmptyScript,
    #[error("{POLICY_URL_ENV} is not set")]
    MissingUrl,
}

/// A source of assistant responses. The seed differentiates sibling rollouts
/// of one group; deterministic adapters may ignore it.
pub trait PolicyAdapter: Send + Sync {
    fn respond(&self, conversation: &Conversation, seed: u64) -> Result<String, PolicyError>;
}

/// Canned responses keyed by turn, for tests and offline replay.
///
/// Holds one or more scripts; the seed selects the script
/// (`seed % scripts.len()`), the number of assistant turns so far selects
/// the line. A script that runs out repeats its last line, so a policy that
/// keeps being asked keeps giving its final answer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    scripts: Vec<Vec<String>>,
}

impl ScriptedPolicy {
    /// Single script used for every seed.
    pub fn new(turns: Vec<String>) -> ScriptedPolicy {
        ScriptedPolicy {
            scripts: vec![turns],
        }
    }

    /// One script per group member; the seed picks the script.
    pub fn per_seed(scripts: Vec<Vec<String>>) -> ScriptedPolicy {
        ScriptedPolicy { scripts }
    }
}

impl PolicyAdapter for ScriptedPolicy {
    fn respond(&self, conversation: &Conversation, seed: u64) -> Result<String, PolicyError> {
        if self.scripts.is_empty() {
            return Err(PolicyError::EmptyScript);
        }
        let script = &self.scripts[(seed as usize) % self.scripts.len()];
        if script.is_empty() {
            return Err(PolicyError::EmptyScript);
        }
        let turn = conversation
            .messages()
            .iter()
            .filter(|m| m.role == Role::Assistant)
            .count();
        Ok(script[turn.min(script.len() - 1)].clone())
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    messages: Vec<WireMessage<'a>>,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    text: &'a str,
}

#[derive(Deserialize)]
struct RemoteResponse {
    text: String,
}

/// HTTP client for an external text-generation endpoint.
///
/// Wire format: request `{"messages": [{"role", "text"}, …]}`, response
/// `{"text": "…"}`. The configured deadline is enforced per request and a
/// timeout surfaces as [`PolicyError::Deadline`].
pub struct RemotePolicy {
    url: String,
    client: reqwest::blocking::Client,
}

impl RemotePolicy {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Result<RemotePolicy, PolicyError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| PolicyError::Request(e.to_string()))?;
        Ok(RemotePolicy {
            url: url.into(),
            client,
        })
    }

    /// Build from `AGSQL_POLICY_URL` / `AGSQL_POLICY_TIMEOUT_MS`.
    pub fn from_env() -> Result<RemotePolicy, PolicyError> {
        let vars: HashMap<String, String> = std::env::vars().collect();
        let url = vars.get(POLICY_URL_ENV).ok_or(PolicyError::MissingUrl)?;
        let timeout_ms = vars
            .get(POLICY_TIMEOUT_ENV)
            .and_then(|v| v.parse::<u64>().ok())
            .unwrap_or(DEFAULT_POLICY_TIMEOUT_MS);
        RemotePolicy::new(url.clone(), Duration::from_millis(timeout_ms))
    }
}

impl PolicyAdapter for RemotePolicy {
    fn respond(&self, conversation: &Conversation, _seed: u64) -> Result<String, PolicyError> {
        let request = RemoteRequest {
            messages: conversation
                .messages()
                .iter()
                .map(|m| WireMessage {
                    role: m.role.as_str(),
                    text: &m.text,
                })
                .collect(),
        };
        let response = self
            .client
            .post(&self.url)
            .json(&request)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    PolicyError::Deadline(e.to_string())
                } else {
                    PolicyError::Request(e.to_string())
                }
            })?;
        if !response.status().is_success() {
            return Err(PolicyError::Request(format!(
                "endpoint returned {}",
                response.status()
            )));
        }
        let body: RemoteResponse = response
            .json()
            .map_err(|e| PolicyError::BadResponse(e.to_string()))?;
        Ok(body.text)
    }
}
