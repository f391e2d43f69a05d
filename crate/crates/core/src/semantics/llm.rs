//! Single-turn LLM completion clients: live HTTP, record, and replay.
//!
//! Fixture files are JSON objects mapping the SHA-256 hex digest of a query
//! string to the response text.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {reason}")]
    Transport { attempts: usize, reason: String },
    #[error("endpoint returned an unexpected payload: {0}")]
    Payload(String),
    #[error("credential variable `{0}` is not set")]
    MissingCredential(String),
    #[error("no recorded response for query hash {hash}")]
    MissingFixture { hash: String },
    #[error("fixture {path}: {reason}")]
    Fixture { path: PathBuf, reason: String },
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, query: &str) -> Result<String, LlmError>;

    /// Number of requests that reached the backing model or fixture.
    fn request_count(&self) -> usize;
}

impl<C: LlmClient + ?Sized> LlmClient for Box<C> {
    fn complete(&self, query: &str) -> Result<String, LlmError> {
        (**self).complete(query)
    }

    fn request_count(&self) -> usize {
        (**self).request_count()
    }
}

pub fn query_hash(query: &str) -> String {
    hex::encode(Sha256::digest(query.as_bytes()))
}

/// Chat-completions style HTTP endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpLlmConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub credential_env: String,
    #[serde(default = "default_retries")]
    pub retries: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_retries() -> usize {
    3
}

fn default_timeout() -> u64 {
    60
}

fn default_backoff() -> u64 {
    500
}

impl Default for HttpLlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4".into(),
            credential_env: "BATSTYLER_LLM_API_KEY".into(),
            retries: default_retries(),
            timeout_secs: default_timeout(),
            backoff_ms: default_backoff(),
        }
    }
}

pub struct HttpLlmClient {
    config: HttpLlmConfig,
    token: String,
    agent: ureq::Agent,
    requests: AtomicUsize,
}

impl HttpLlmClient {
    pub fn from_env(config: HttpLlmConfig) -> Result<Self, LlmError> {
        let token = std::env::var(&config.credential_env)
            .map_err(|_| LlmError::MissingCredential(config.credential_env.clone()))?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            config,
            token,
            agent,
            requests: AtomicUsize::new(0),
        })
    }

    fn attempt(&self, query: &str) -> Result<String, String> {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": query}],
        });
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.token))
            .send_json(&body)
            .map_err(|e| e.to_string())?;
        let value: serde_json::Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        value
            .pointer("/choices/0/message/content")
            .or_else(|| value.pointer("/choices/0/text"))
            .and_then(|v| v.as_str())
            .map(str::to_owned)
            .ok_or_else(|| format!("PAYLOAD:{value}"))
    }
}

impl LlmClient for HttpLlmClient {
    fn complete(&self, query: &str) -> Result<String, LlmError> {
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for n in 0..attempts {
            self.requests.fetch_add(1, Ordering::SeqCst);
            match self.attempt(query) {
                Ok(text) => return Ok(text),
                Err(e) if e.starts_with("PAYLOAD:") => {
                    return Err(LlmError::Payload(e["PAYLOAD:".len()..].to_owned()))
                }
                Err(e) => last = e,
            }
            if n + 1 < attempts {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms << n));
            }
        }
        Err(LlmError::Transport {
            attempts,
            reason: last,
        })
    }

    fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

/// Answers from a fixture file; never touches the network.
#[derive(Debug, Default)]
pub struct ReplayClient {
    responses: BTreeMap<String, String>,
    requests: AtomicUsize,
}

impl ReplayClient {
    pub fn new(responses: BTreeMap<String, String>) -> Self {
        Self {
            responses,
            requests: AtomicUsize::new(0),
        }
    }

    /// Builds a fixture from `(query, response)` pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self::new(
            pairs
                .into_iter()
                .map(|(q, r)| (query_hash(q), r.to_owned()))
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(read_fixture(path)?))
    }
}

impl LlmClient for ReplayClient {
    fn complete(&self, query: &str) -> Result<String, LlmError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let hash = query_hash(query);
        self.responses
            .get(&hash)
            .cloned()
            .ok_or(LlmError::MissingFixture { hash })
    }

    fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

/// Forwards to `inner` and remembers every exchange for later replay.
pub struct RecordingClient<C> {
    inner: C,
    recorded: Mutex<BTreeMap<String, String>>,
}

impl<C: LlmClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            recorded: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn recorded(&self) -> BTreeMap<String, String> {
        self.recorded.lock().expect("recorder poisoned").clone()
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        write_fixture(path, &self.recorded())
    }
}

impl<C: LlmClient> LlmClient for RecordingClient<C> {
    fn complete(&self, query: &str) -> Result<String, LlmError> {
        let text = self.inner.complete(query)?;
        self.recorded
            .lock()
            .expect("recorder poisoned")
            .insert(query_hash(query), text.clone());
        Ok(text)
    }

    fn request_count(&self) -> usize {
        self.inner.request_count()
    }
}

pub fn read_fixture(path: &Path) -> Result<BTreeMap<String, String>, LlmError> {
    let text = std::fs::read_to_string(path).map_err(|e| LlmError::Fixture {
        path: path.to_owned(),
        reason: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| LlmError::Fixture {
        path: path.to_owned(),
        reason: e.to_string(),
    })
}

pub fn write_fixture(path: &Path, map: &BTreeMap<String, String>) -> Result<(), LlmError> {
    let text = serde_json::to_string_pretty(map).expect("string map serializes");
    std::fs::write(path, text + "\n").map_err(|e| LlmError::Fixture {
        path: path.to_owned(),
        reason: e.to_string(),
    })
}
