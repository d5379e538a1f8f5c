//! The single boundary for model calls: chat (with images), text embedding,
//! and image generation.
//!
//! Wire protocol (JSON over HTTP POST):
//!
//! ```text
//! /v1/chat      {messages, temperature, max_tokens} -> {text, usage}
//! /v1/embed     {texts}                             -> {vectors}
//! /v1/generate  {prompt, image_b64?}                -> {image_b64}
//! ```
//!
//! A [`Gateway`] runs in one of four modes. `live` talks HTTP through a
//! [`Transport`]; `mock` answers from registered templates and a responder
//! closure; `record` forwards to the inner backend and writes every response
//! to a cassette; `replay` answers only from a cassette and never touches the
//! backend.

mod cassette;
mod client;
mod mock;
mod transport;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cassette::Cassette;
pub use client::{Backend, CallRecord, Gateway};
pub use mock::{mock_embedding, mock_image, MockBackend, Responder};
pub use transport::{HttpReply, Transport, TransportError, UreqTransport};

pub const ENV_URL: &str = "PRISM_GATEWAY_URL";
pub const ENV_KEY: &str = "PRISM_GATEWAY_KEY";
pub const ENV_MODE: &str = "PRISM_GATEWAY_MODE";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("gateway returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("gateway call timed out")]
    Timeout,
    #[error("cannot decode gateway response: {0}")]
    Decode(String),
    #[error("invalid gateway request: {0}")]
    Precondition(String),
    #[error("embedding dimensions differ within one batch ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("no cassette entry for request {0}")]
    ReplayMiss(String),
    #[error("mock has no response for request {0}")]
    MockUnhandled(String),
    #[error("cassette {path}: {message}")]
    Cassette { path: PathBuf, message: String },
    #[error("invalid gateway configuration: {0}")]
    Config(String),
}

impl GatewayError {
    /// Worth another attempt (5xx, timeouts, connection failures).
    pub fn is_retryable(&self) -> bool {
        match self {
            GatewayError::Status { status, .. } => *status >= 500,
            GatewayError::Timeout | GatewayError::Transport(_) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GatewayMode {
    Live,
    #[default]
    Mock,
    Record,
    Replay,
}

impl std::str::FromStr for GatewayMode {
    type Err = GatewayError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "live" => Ok(Self::Live),
            "mock" => Ok(Self::Mock),
            "record" => Ok(Self::Record),
            "replay" => Ok(Self::Replay),
            other => Err(GatewayError::Config(format!(
                "unknown gateway mode {other:?}"
            ))),
        }
    }
}

/// API key that never prints and never serializes.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.0.is_empty() {
            "Secret(<empty>)"
        } else {
            "Secret(<redacted>)"
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub base_url: String,
    #[serde(skip)]
    pub api_key: Secret,
    pub timeout_s: f64,
    pub max_retries: usize,
    /// First retry delay; doubles per attempt.
    pub backoff_ms: u64,
    pub mode: GatewayMode,
    pub cassette: Option<PathBuf>,
    pub max_in_flight: usize,
    /// Model name forwarded to providers by the gateway service.
    pub model: String,
    pub max_tokens: u32,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            api_key: Secret::default(),
            timeout_s: 120.0,
            max_retries: 2,
            backoff_ms: 500,
            mode: GatewayMode::Mock,
            cassette: None,
            max_in_flight: 4,
            model: String::new(),
            max_tokens: 2048,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.timeout_s > 0.0) {
            return Err(GatewayError::Config("timeout_s must be > 0".into()));
        }
        if matches!(self.mode, GatewayMode::Replay | GatewayMode::Record) && self.cassette.is_none()
        {
            return Err(GatewayError::Config(format!(
                "{:?} mode needs a cassette path",
                self.mode
            )));
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }

    /// Overrides url, key, and mode from `PRISM_GATEWAY_*` variables.
    pub fn apply_env(&mut self) -> Result<(), GatewayError> {
        if let Ok(url) = std::env::var(ENV_URL) {
            self.base_url = url;
        }
        if let Ok(key) = std::env::var(ENV_KEY) {
            self.api_key = Secret::new(key);
        }
        if let Ok(mode) = std::env::var(ENV_MODE) {
            self.mode = mode.parse()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartKind {
    Text,
    Image,
}

/// Text, or a base64-encoded PNG.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Part {
    pub kind: PartKind,
    pub payload: String,
}

impl Part {
    pub fn text(s: impl Into<String>) -> Self {
        Self {
            kind: PartKind::Text,
            payload: s.into(),
        }
    }

    pub fn image_png(bytes: &[u8]) -> Self {
        use base64::Engine;
        Self {
            kind: PartKind::Image,
            payload: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn user(parts: Vec<Part>) -> Self {
        Self {
            role: Role::User,
            parts,
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            parts: vec![Part::text(text)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Local label for logs and mock routing; not sent on the wire.
    #[serde(skip)]
    pub task: Option<String>,
    /// Local context (design id, candidate clusters, ...) for mocks and
    /// logs; not sent on the wire.
    #[serde(skip)]
    pub meta: BTreeMap<String, String>,
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>, temperature: f64) -> Self {
        Self {
            messages,
            temperature,
            max_tokens: 2048,
            task: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_task(mut self, task: &str) -> Self {
        self.task = Some(task.to_string());
        self
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    /// All text parts in order.
    pub fn text_parts(&self) -> impl Iterator<Item = &str> {
        self.messages
            .iter()
            .flat_map(|m| &m.parts)
            .filter(|p| p.kind == PartKind::Text)
            .map(|p| p.payload.as_str())
    }

    pub fn image_count(&self) -> usize {
        self.messages
            .iter()
            .flat_map(|m| &m.parts)
            .filter(|p| p.kind == PartKind::Image)
            .count()
    }

    /// Hex digest of the text parts (the mock's template key).
    pub fn text_hash(&self) -> String {
        let mut h = Sha256::new();
        for t in self.text_parts() {
            h.update(t.as_bytes());
            h.update([0x1e]);
        }
        hex(&h.finalize())
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.iter().all(|m| m.parts.is_empty()) {
            return Err(GatewayError::Precondition(
                "chat request has no parts".into(),
            ));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Precondition(format!(
                "temperature {} not in [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    #[serde(default)]
    pub usage: Usage,
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}
