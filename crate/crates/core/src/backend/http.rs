//! OpenAI-style chat-completions client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest, Speaker};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, initial_backoff_ms: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    #[serde(default = "default_key_env")]
    pub key_env_var: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout() -> u64 {
    120
}

pub struct HttpBackend {
    config: HttpConfig,
    key: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let key = std::env::var(&config.key_env_var).ok().filter(|k| !k.is_empty());
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(config.timeout_secs))).build().into();
        HttpBackend { config, key, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.speaker {
                    Speaker::System => "system",
                    Speaker::User => "user",
                    Speaker::Assistant => "assistant",
                };
                json!({"role": role, "content": m.text})
            })
            .collect();
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    fn attempt(&self, body: &Value) -> Result<Value, (bool, String)> {
        let mut req = self.agent.post(&self.endpoint());
        if let Some(k) = &self.key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => resp.body_mut().read_json::<Value>().map_err(|e| (false, e.to_string())),
            Err(ureq::Error::StatusCode(code)) => {
                let retry = code == 429 || code >= 500;
                Err((retry, format!("HTTP status {code}")))
            }
            Err(e) => Err((true, e.to_string())),
        }
    }
}

/// Assistant text of a chat-completions payload.
pub(crate) fn completion_text(payload: &Value) -> Option<String> {
    payload.pointer("/choices/0/message/content").and_then(Value::as_str).map(str::to_string)
}

impl ChatBackend for HttpBackend {
    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let body = self.body(request);
        let attempts = self.config.retry.max_attempts.max(1);
        let mut backoff = Duration::from_millis(self.config.retry.initial_backoff_ms);
        let mut last = String::new();
        for n in 1..=attempts {
            match self.attempt(&body) {
                Ok(payload) => {
                    return completion_text(&payload)
                        .ok_or_else(|| BackendError::Refusal(format!("no message content in {payload}")));
                }
                Err((false, msg)) => return Err(BackendError::Refusal(msg)),
                Err((true, msg)) => {
                    tracing::warn!(attempt = n, error = %msg, "chat request failed");
                    last = msg;
                    if n < attempts {
                        std::thread::sleep(backoff);
                        backoff *= 2;
                    }
                }
            }
        }
        Err(BackendError::Network { attempts, message: last })
    }
}
