//! Chat-completions client: one trait, one HTTP implementation.
//!
//! The HTTP client speaks the widely-implemented OpenAI-style
//! `/chat/completions` JSON shape, authenticates with a bearer token
//! when a key is supplied, and retries rate limits, server errors, and
//! network failures with exponential backoff. Authentication rejections
//! and client-side errors are not retried — they will not get better.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LlmError {
    #[error("endpoint rejected the credentials: {0}")]
    Auth(String),
    #[error("could not obtain a completion: {0}")]
    Transport(String),
    #[error("endpoint answered with an unusable body: {0}")]
    MalformedResponse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".to_string(), content: content.into() }
    }
}

/// One chat request. Serializes to the wire shape directly:
/// `{"model", "messages", "temperature", "seed"}` with `seed` omitted
/// when absent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    /// The first choice's message content.
    pub content: String,
    /// Whatever the endpoint reported under `usage`, untouched.
    pub usage: Option<serde_json::Value>,
}

/// Anything that can turn a chat request into a completion. Shared
/// across threads, so implementations carry their own interior
/// mutability if they keep state.
pub trait LlmClient: Send + Sync {
    fn chat(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError>;
}

pub const DEFAULT_MAX_ATTEMPTS: u32 = 3;
pub const DEFAULT_INITIAL_BACKOFF: Duration = Duration::from_secs(1);
const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

pub struct HttpLlmClient {
    endpoint: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
    max_attempts: u32,
    initial_backoff: Duration,
}

/// Classifies a failed attempt: fatal errors surface immediately,
/// retryable ones go through the backoff loop.
enum AttemptError {
    Fatal(LlmError),
    Retryable(LlmError),
}

#[derive(Deserialize)]
struct CompletionBody {
    #[serde(default)]
    choices: Vec<CompletionChoice>,
    #[serde(default)]
    usage: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    content: String,
}

impl HttpLlmClient {
    /// `endpoint` is the full chat-completions URL. The key — when the
    /// endpoint needs one — must come from the process environment or a
    /// secret store, never from configuration text on disk.
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        HttpLlmClient {
            endpoint: endpoint.into(),
            api_key,
            http: reqwest::blocking::Client::builder()
                .timeout(DEFAULT_TIMEOUT)
                .build()
                .expect("HTTP client initializes"),
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            initial_backoff: DEFAULT_INITIAL_BACKOFF,
        }
    }

    /// Overrides the retry policy (tests use millisecond backoffs).
    pub fn with_retry(mut self, max_attempts: u32, initial_backoff: Duration) -> Self {
        assert!(max_attempts >= 1, "at least one attempt is required");
        self.max_attempts = max_attempts;
        self.initial_backoff = initial_backoff;
        self
    }

    fn try_once(&self, request: &LlmRequest) -> Result<LlmResponse, AttemptError> {
        let mut builder = self.http.post(&self.endpoint).json(request);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|e| AttemptError::Retryable(LlmError::Transport(e.to_string())))?;
        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(AttemptError::Fatal(LlmError::Auth(format!(
                "endpoint answered {status}"
            ))));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Retryable(LlmError::Transport(format!(
                "endpoint answered {status}"
            ))));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(LlmError::Transport(format!(
                "endpoint answered {status}"
            ))));
        }
        let body: CompletionBody = response
            .json()
            .map_err(|e| AttemptError::Fatal(LlmError::MalformedResponse(e.to_string())))?;
        let choice = body.choices.into_iter().next().ok_or_else(|| {
            AttemptError::Fatal(LlmError::MalformedResponse(
                "completion carried no choices".to_string(),
            ))
        })?;
        Ok(LlmResponse { content: choice.message.content, usage: body.usage })
    }
}

impl LlmClient for HttpLlmClient {
    fn chat(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let mut backoff = self.initial_backoff;
        let mut last_error = None;
        for attempt in 1..=self.max_attempts {
            if attempt > 1 {
                thread::sleep(backoff);
                backoff *= 2;
            }
            match self.try_once(request) {
                Ok(response) => return Ok(response),
                Err(AttemptError::Fatal(error)) => return Err(error),
                Err(AttemptError::Retryable(error)) => last_error = Some(error),
            }
        }
        Err(last_error.expect("loop ran at least once"))
    }
}
