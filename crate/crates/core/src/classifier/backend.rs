use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::io::{read_jsonl, sha256_hex};

use super::{BackendKind, ConfigError, ModelConfig};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: rate limiting, server errors, dropped connections.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("backend error: {0}")]
    Fatal(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transient(_))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Completion {
            text: text.into(),
            ..Default::default()
        }
    }
}

pub trait ModelBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<Completion, BackendError>;
}

/// Builds the backend named by a configuration.
pub fn from_config(cfg: &ModelConfig) -> Result<Box<dyn ModelBackend>, ConfigError> {
    cfg.validate()?;
    match cfg.backend {
        BackendKind::Replay => Ok(Box::new(
            ReplayBackend::load(Path::new(&cfg.endpoint))
                .map_err(|e| ConfigError::Invalid(format!("replay file {}: {e}", cfg.endpoint)))?,
        )),
        BackendKind::LocalInference | BackendKind::RemoteApi => {
            Ok(Box::new(ChatCompletionsBackend::from_config(cfg)?))
        }
    }
}

/// Client for OpenAI-style `/chat/completions` endpoints. Local servers
/// (llama.cpp, Ollama, vLLM) and most hosted APIs speak this protocol.
pub struct ChatCompletionsBackend {
    name: String,
    endpoint: String,
    model: String,
    temperature: f64,
    max_tokens: u32,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl ChatCompletionsBackend {
    pub fn from_config(cfg: &ModelConfig) -> Result<Self, ConfigError> {
        let api_key = match &cfg.api_key_env {
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Some(v),
                _ => {
                    return Err(ConfigError::Invalid(format!(
                        "environment variable {var} is not set"
                    )))
                }
            },
            None if cfg.backend == BackendKind::RemoteApi => {
                return Err(ConfigError::Invalid(format!(
                    "model {} uses remote_api but names no api_key_env",
                    cfg.model_id
                )))
            }
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(ChatCompletionsBackend {
            name: cfg.model_id.clone(),
            endpoint: cfg.endpoint.clone(),
            model: cfg.remote_model.clone().unwrap_or_else(|| cfg.model_id.clone()),
            temperature: cfg.decoding.temperature,
            max_tokens: cfg.decoding.max_output_tokens,
            api_key,
            client,
        })
    }

    fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

pub(crate) fn classify_status(status: u16, body: &str) -> BackendError {
    let msg = format!("HTTP {status}: {}", body.chars().take(200).collect::<String>());
    match status {
        401 | 403 => BackendError::Auth(msg),
        408 | 429 | 500..=599 => BackendError::Transient(msg),
        _ => BackendError::Fatal(msg),
    }
}

pub(crate) fn parse_chat_response(body: &Value) -> Result<Completion, BackendError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Fatal("response has no choices[0].message.content".into()))?;
    Ok(Completion {
        text: text.to_string(),
        prompt_tokens: body.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        completion_tokens: body.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    })
}

impl ModelBackend for ChatCompletionsBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, prompt: &str) -> Result<Completion, BackendError> {
        let mut req = self.client.post(&self.endpoint).json(&self.request_body(prompt));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| BackendError::Transient(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, &text));
        }
        let body: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Fatal(format!("malformed response body: {e}")))?;
        parse_chat_response(&body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub prompt_sha256: String,
    pub response: String,
}

/// Serves recorded responses keyed by the sha256 of the prompt.
pub struct ReplayBackend {
    name: String,
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn new(name: impl Into<String>, records: impl IntoIterator<Item = ReplayRecord>) -> Self {
        ReplayBackend {
            name: name.into(),
            responses: records
                .into_iter()
                .map(|r| (r.prompt_sha256, r.response))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let records: Vec<ReplayRecord> = read_jsonl(path)?;
        Ok(Self::new(format!("replay:{}", path.display()), records))
    }

    pub fn record(prompt: &str, response: impl Into<String>) -> ReplayRecord {
        ReplayRecord {
            prompt_sha256: sha256_hex(prompt.as_bytes()),
            response: response.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ModelBackend for ReplayBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, prompt: &str) -> Result<Completion, BackendError> {
        let key = sha256_hex(prompt.as_bytes());
        self.responses
            .get(&key)
            .map(Completion::text)
            .ok_or_else(|| BackendError::Fatal(format!("no recorded response for prompt {key}")))
    }
}

type CompleteFn = dyn Fn(&str) -> Result<Completion, BackendError> + Send + Sync;

/// Backend from a closure. Used for stubs in tests and examples.
pub struct FnBackend {
    name: String,
    f: Box<CompleteFn>,
}

impl FnBackend {
    pub fn new<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&str) -> Result<Completion, BackendError> + Send + Sync + 'static,
    {
        FnBackend {
            name: name.into(),
            f: Box::new(f),
        }
    }

    /// Always answers with the same text.
    pub fn fixed(name: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(name, move |_| Ok(Completion::text(text.clone())))
    }
}

impl ModelBackend for FnBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, prompt: &str) -> Result<Completion, BackendError> {
        (self.f)(prompt)
    }
}
