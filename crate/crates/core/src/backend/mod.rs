//! Chat-completion backends for the five LLM roles.
//!
//! Requests carry rendered prompt messages plus an optional structured
//! context. Real models only see the messages; the scripted oracle reads the
//! context instead, which keeps it independent of prompt wording.

mod http;
mod oracle;
mod replay;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::Env;
use crate::prompts::Role;
use crate::textcraft::NoPlan;

pub use http::{HttpBackend, HttpConfig, RetryPolicy};
pub use oracle::{ActorDouble, DistillContext, NoiseClass, OracleBackend, TurnContext, TurnStep};
pub use replay::{CacheRecord, ReplayCache, ReplayMode};

pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub speaker: Speaker,
    pub text: String,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Message { speaker: Speaker::System, text: text.into() }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Message { speaker: Speaker::User, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: Role,
    pub env: Env,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Structured side channel for scripted backends; not part of the
    /// fingerprint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<Value>,
}

impl ChatRequest {
    pub fn new(role: Role, env: Env, messages: Vec<Message>) -> Self {
        ChatRequest { role, env, messages, temperature: 0.0, max_tokens: DEFAULT_MAX_TOKENS, context: None }
    }

    pub fn with_context(mut self, context: impl Serialize) -> Self {
        self.context = Some(serde_json::to_value(context).expect("context serializes"));
        self
    }

    /// Stable hash of role, env, messages and sampling parameters.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::json!({
            "role": self.role,
            "env": self.env,
            "messages": self.messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short human-readable summary stored next to cached responses.
    pub fn digest(&self) -> String {
        let chars: usize = self.messages.iter().map(|m| m.text.chars().count()).sum();
        format!("{}/{} {} messages, {} chars", self.role, self.env, self.messages.len(), chars)
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("network error after {attempts} attempts: {message}")]
    Network { attempts: u32, message: String },
    #[error("no cached response for request {fingerprint}")]
    CacheMiss { fingerprint: String },
    #[error("backend refused or returned an unusable payload: {0}")]
    Refusal(String),
    #[error(transparent)]
    NoPlan(#[from] NoPlan),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub trait ChatBackend: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).chat(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).chat(request)
    }
}

/// First JSON value of the wanted shape embedded in `text`, tolerating prose
/// and code fences around it.
pub fn extract_json(text: &str, open: char) -> Option<Value> {
    let close = if open == '[' { ']' } else { '}' };
    for (start, _) in text.match_indices(open) {
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        for (off, c) in text[start..].char_indices() {
            if in_str {
                match c {
                    _ if escaped => escaped = false,
                    '\\' => escaped = true,
                    '"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match c {
                '"' => in_str = true,
                c if c == open => depth += 1,
                c if c == close => {
                    depth -= 1;
                    if depth == 0 {
                        if let Ok(v) = serde_json::from_str(&text[start..start + off + 1]) {
                            return Some(v);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_ignores_context() {
        let a = ChatRequest::new(Role::Actor, Env::Textcraft, vec![Message::user("hi")]);
        let b = a.clone().with_context(serde_json::json!({"x": 1}));
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = a.clone();
        c.temperature = 0.7;
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    #[test]
    fn json_extraction_is_lenient_to_prose() {
        let v = extract_json("Sure! ```json\n{\"a\": \"}\", \"b\": [1]}\n``` done", '{').unwrap();
        assert_eq!(v["b"][0], 1);
        assert_eq!(extract_json("x [1, [2]] y", '[').unwrap(), serde_json::json!([1, [2]]));
        assert!(extract_json("no json here", '{').is_none());
        assert_eq!(extract_json("[oops] then [\"a\"]", '[').unwrap(), serde_json::json!(["a"]));
    }
}
