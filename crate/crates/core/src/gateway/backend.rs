//! Chat-completion backends: a scripted fixture backend for deterministic
//! runs and an HTTP backend speaking the de-facto chat-completions wire
//! format with exponential-backoff retries.

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::ChatExchange;

#[derive(Debug, Clone)]
pub struct ChatRequest {
    /// Canonical role string, e.g. `answer` or `knowledge:llama3-8b`.
    pub role: String,
    pub turn: usize,
    /// Stable hash of the rendered prompt's slot values.
    pub key: String,
    pub prompt: String,
    pub system: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub text: String,
    pub latency_ms: Option<u64>,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

impl ChatResponse {
    pub fn of(text: String) -> Self {
        ChatResponse {
            text,
            latency_ms: None,
            prompt_tokens: None,
            completion_tokens: None,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse>;
}

/// One scripted response. `turn: null` matches any turn, `key: "*"` matches
/// any slot hash, and the optional `when_contains` narrows a wildcard record
/// to prompts containing the given substring. Records are tried in file
/// order; the first match wins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub role: String,
    #[serde(default)]
    pub turn: Option<usize>,
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when_contains: Option<String>,
    pub response: String,
}

impl FixtureRecord {
    fn matches(&self, req: &ChatRequest) -> bool {
        self.role == req.role
            && self.turn.map_or(true, |t| t == req.turn)
            && (self.key == "*" || self.key == req.key)
            && self
                .when_contains
                .as_deref()
                .map_or(true, |s| req.prompt.contains(s))
    }
}

/// Deterministic scripted backend: identical requests always produce
/// identical responses.
pub struct FixtureBackend {
    records: Vec<FixtureRecord>,
}

impl FixtureBackend {
    pub fn from_records(records: Vec<FixtureRecord>) -> Self {
        FixtureBackend { records }
    }

    /// Load a JSON-lines fixture file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: FixtureRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
            records.push(rec);
        }
        Ok(FixtureBackend { records })
    }

    /// Rebuild a backend from a recorded exchange trace; replaying the same
    /// run against it reproduces every response exactly.
    pub fn from_trace(exchanges: &[ChatExchange]) -> Self {
        let records = exchanges
            .iter()
            .map(|e| FixtureRecord {
                role: e.role.clone(),
                turn: Some(e.turn),
                key: e.key.clone(),
                when_contains: None,
                response: e.response.clone(),
            })
            .collect();
        FixtureBackend { records }
    }
}

impl ChatBackend for FixtureBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        for rec in &self.records {
            if rec.matches(req) {
                return Ok(ChatResponse::of(rec.response.clone()));
            }
        }
        Err(Error::Backend {
            role: req.role.clone(),
            msg: format!("no fixture for turn {} key {}", req.turn, req.key),
        })
    }
}

/// Endpoint settings for one HTTP-bound role.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HttpEndpoint {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub initial_backoff_ms: u64,
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_max_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

/// Blocking chat-completions client with exponential backoff on 429/5xx and
/// transport errors.
pub struct HttpBackend {
    endpoint: HttpEndpoint,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

impl HttpBackend {
    pub fn new(endpoint: HttpEndpoint) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(HttpBackend { endpoint, client })
    }

    fn attempt(
        &self,
        req: &ChatRequest,
    ) -> std::result::Result<(String, Option<WireUsage>), (bool, String)> {
        let mut messages = Vec::new();
        if let Some(system) = &req.system {
            messages.push(WireMessage {
                role: "system",
                content: system,
            });
        }
        messages.push(WireMessage {
            role: "user",
            content: &req.prompt,
        });
        let body = WireRequest {
            model: &self.endpoint.model,
            messages,
            temperature: req.temperature,
            max_tokens: req.max_tokens,
        };
        let url = format!(
            "{}/chat/completions",
            self.endpoint.base_url.trim_end_matches('/')
        );
        let mut request = self.client.post(&url).json(&body);
        if let Some(var) = &self.endpoint.api_key_env {
            if let Ok(key) = std::env::var(var) {
                request = request.bearer_auth(key);
            }
        }
        let response = request
            .send()
            .map_err(|e| (e.is_timeout() || e.is_connect(), e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.as_u16() == 408 || status.is_server_error();
            return Err((retryable, format!("http status {status}")));
        }
        let parsed: WireResponse = response
            .json()
            .map_err(|e| (false, format!("bad response body: {e}")))?;
        let text = parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or((false, "response had no choices".to_string()))?;
        Ok((text, parsed.usage))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let started = Instant::now();
        let mut backoff = Duration::from_millis(self.endpoint.initial_backoff_ms);
        let mut last_err = String::new();
        for attempt in 0..self.endpoint.max_attempts {
            if attempt > 0 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            match self.attempt(req) {
                Ok((text, usage)) => {
                    return Ok(ChatResponse {
                        text,
                        latency_ms: Some(started.elapsed().as_millis() as u64),
                        prompt_tokens: usage.as_ref().and_then(|u| u.prompt_tokens),
                        completion_tokens: usage.as_ref().and_then(|u| u.completion_tokens),
                    })
                }
                Err((retryable, msg)) => {
                    last_err = msg;
                    if !retryable {
                        break;
                    }
                }
            }
        }
        Err(Error::Backend {
            role: req.role.clone(),
            msg: last_err,
        })
    }
}
