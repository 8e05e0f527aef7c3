//! Chat-completion and embedding access.
//!
//! Three interchangeable chat backends share the [`ChatBackend`] trait: a
//! remote HTTP client, a rule-driven scripted backend, and cassette
//! record/replay wrappers.

mod cassette;
mod remote;
mod scripted;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cassette::{Cassette, CassetteEntry, RecordingBackend, ReplayBackend, SectionDigest};
pub use remote::{backoff_schedule, RemoteBackend, RemoteConfig, RemoteEmbedder, Sleeper};
pub use scripted::{ScriptRule, ScriptedBackend};

/// Dimension of every embedding produced in this crate.
pub const EMBEDDING_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("cassette drift at entry {index}: first differing section is {section}")]
    CassetteDrift { index: usize, section: String },
    #[error("cassette exhausted after {0} entries")]
    CassetteExhausted(usize),
    #[error("cassette line {line}: {reason}")]
    BadCassette { line: usize, reason: String },
    #[error("no script rule matched and no default response is declared")]
    NoScriptMatch,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("missing configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_tag: String,
}

/// Part of a request that participates in the digest.
#[derive(Serialize)]
struct Canonical<'a> {
    messages: &'a [ChatMessage],
    temperature: String,
}

impl ChatRequest {
    /// Single user message at temperature 0.
    pub fn user(prompt: impl Into<String>) -> Self {
        Self {
            messages: vec![ChatMessage::user(prompt)],
            temperature: 0.0,
            max_tokens: 1024,
            model_tag: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("request has no messages".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if let Some(m) = self
            .messages
            .iter()
            .find(|m| m.role != Role::Assistant && m.content.trim().is_empty())
        {
            return Err(LlmError::InvalidRequest(format!(
                "{:?} message is empty",
                m.role
            )));
        }
        Ok(())
    }

    /// Stable hash of the canonical request. `max_tokens` and `model_tag` do
    /// not participate.
    pub fn digest(&self) -> String {
        let canonical = Canonical {
            messages: &self.messages,
            temperature: format!("{:.6}", self.temperature),
        };
        let bytes = serde_json::to_vec(&canonical).expect("request serializes");
        hex(&Sha256::digest(bytes))
    }

    /// All message contents joined, used for substring matching.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Anything that can answer a chat request with a single text.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

/// Text to unit-length vector of dimension [`EMBEDDING_DIM`].
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError>;
    /// Identifies the embedding space; vectors with different tags are not comparable.
    fn tag(&self) -> String;
}

/// Truncate or zero-pad to [`EMBEDDING_DIM`], then L2-normalize.
pub fn fit_embedding(mut v: Vec<f64>) -> Result<Vec<f64>, LlmError> {
    v.resize(EMBEDDING_DIM, 0.0);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(LlmError::BadResponse(
            "embedding has zero or non-finite norm".into(),
        ));
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
