//! Zero-shot and few-shot classification with language-model backends.
//!
//! [`prompt`] renders prompts, [`parse`] turns raw responses into label
//! vectors, [`backend`] holds the model adapters, [`invoke`] adds rate
//! limiting and retries, and [`batch`] runs cached, parallel batches.

pub mod backend;
pub mod batch;
pub mod cache;
pub mod invoke;
pub mod parse;
pub mod prompt;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SourceKind;
use crate::taxonomy::LabelVector;

pub use backend::{BackendError, ChatCompletionsBackend, Completion, FnBackend, ModelBackend, ReplayBackend};
pub use batch::{classify_batch, classify_batch_with, BatchError, BatchOptions, BatchOutput, RunManifest};
pub use cache::ResponseCache;
pub use invoke::{Clock, Invocation, InvokeError, Invoker, RateLimiter, SimClock, SystemClock};
pub use parse::parse_response;
pub use prompt::build_prompt;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("temperature must be >= 0, got {0}")]
    Temperature(f64),
    #[error("retry.max_attempts must be >= 1")]
    MaxAttempts,
    #[error("rate limit must be positive, got {0}")]
    RateLimit(f64),
    #[error("zero-shot prompts take no exemplars, got {0}")]
    ZeroShotExemplars(usize),
    #[error("few-shot prompts take exactly {FEW_SHOT_EXEMPLARS} exemplars, got {0}")]
    FewShotCount(usize),
    #[error("few-shot exemplars must span at least two source kinds")]
    FewShotSources,
    #[error("{0}")]
    Invalid(String),
}

/// Number of in-context exemplars in a few-shot prompt.
pub const FEW_SHOT_EXEMPLARS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    ZeroShot,
    FewShot,
}

impl PromptMode {
    pub const ALL: [PromptMode; 2] = [PromptMode::ZeroShot, PromptMode::FewShot];

    pub fn id(self) -> &'static str {
        match self {
            PromptMode::ZeroShot => "zero_shot",
            PromptMode::FewShot => "few_shot",
        }
    }

    /// Column label in score tables.
    pub fn label(self) -> &'static str {
        match self {
            PromptMode::ZeroShot => "Zero",
            PromptMode::FewShot => "Few",
        }
    }

    pub fn parse(s: &str) -> Option<PromptMode> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "zero" | "zero_shot" | "zeroshot" => Some(PromptMode::ZeroShot),
            "few" | "few_shot" | "fewshot" => Some(PromptMode::FewShot),
            _ => None,
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// OpenAI-compatible server on the local machine (llama.cpp, Ollama, vLLM).
    LocalInference,
    /// Hosted API reached with a credential from the environment.
    RemoteApi,
    /// Recorded responses served from a file; `endpoint` is the file path.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_output_tokens: u32,
}

fn default_max_tokens() -> u32 {
    512
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding {
            temperature: 0.0,
            max_output_tokens: default_max_tokens(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Seconds before the first retry; doubles on each further retry.
    pub backoff_base: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model_id: String,
    pub backend: BackendKind,
    pub endpoint: String,
    /// Model name sent to the server; defaults to `model_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_model: Option<String>,
    #[serde(default)]
    pub decoding: Decoding,
    /// Requests per minute; `None` means unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit: Option<f64>,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Environment variable holding the API key (remote backends).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.decoding.temperature >= 0.0) {
            return Err(ConfigError::Temperature(self.decoding.temperature));
        }
        if self.retry.max_attempts < 1 {
            return Err(ConfigError::MaxAttempts);
        }
        if let Some(r) = self.rate_limit {
            if !(r > 0.0) {
                return Err(ConfigError::RateLimit(r));
            }
        }
        if self.model_id.trim().is_empty() {
            return Err(ConfigError::Invalid("model_id is empty".into()));
        }
        Ok(())
    }
}

/// One in-context example: masked text with its gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub doc_id: String,
    pub source: SourceKind,
    pub text: String,
    pub labels: LabelVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub mode: PromptMode,
    #[serde(default)]
    pub exemplars: Vec<Exemplar>,
    pub instruction_version: String,
}

impl PromptSpec {
    pub fn zero_shot(version: impl Into<String>) -> Self {
        PromptSpec {
            mode: PromptMode::ZeroShot,
            exemplars: Vec::new(),
            instruction_version: version.into(),
        }
    }

    pub fn few_shot(version: impl Into<String>, exemplars: Vec<Exemplar>) -> Self {
        PromptSpec {
            mode: PromptMode::FewShot,
            exemplars,
            instruction_version: version.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.mode {
            PromptMode::ZeroShot if !self.exemplars.is_empty() => {
                Err(ConfigError::ZeroShotExemplars(self.exemplars.len()))
            }
            PromptMode::FewShot if self.exemplars.len() != FEW_SHOT_EXEMPLARS => {
                Err(ConfigError::FewShotCount(self.exemplars.len()))
            }
            PromptMode::FewShot => {
                let first = self.exemplars[0].source;
                if self.exemplars.iter().all(|e| e.source == first) {
                    Err(ConfigError::FewShotSources)
                } else {
                    Ok(())
                }
            }
            PromptMode::ZeroShot => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseStatus {
    Ok,
    Repaired,
    Failed,
}

/// One model's labels for one document under one prompt mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub model_id: String,
    pub mode: PromptMode,
    pub labels: LabelVector,
    pub raw_response: String,
    pub parse_status: ParseStatus,
}

impl Prediction {
    pub fn is_scorable(&self) -> bool {
        self.parse_status != ParseStatus::Failed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exemplar(i: usize, source: SourceKind) -> Exemplar {
        Exemplar {
            doc_id: format!("e{i}"),
            source,
            text: format!("example {i}"),
            labels: LabelVector::EMPTY,
        }
    }

    #[test]
    fn prompt_spec_invariants() {
        assert!(PromptSpec::zero_shot("v1").validate().is_ok());
        let mut zs = PromptSpec::zero_shot("v1");
        zs.exemplars.push(exemplar(0, SourceKind::X));
        assert!(matches!(zs.validate(), Err(ConfigError::ZeroShotExemplars(1))));

        let four: Vec<_> = (0..4).map(|i| exemplar(i, SourceKind::X)).collect();
        assert!(matches!(
            PromptSpec::few_shot("v1", four).validate(),
            Err(ConfigError::FewShotCount(4))
        ));
        let same: Vec<_> = (0..5).map(|i| exemplar(i, SourceKind::X)).collect();
        assert!(matches!(
            PromptSpec::few_shot("v1", same).validate(),
            Err(ConfigError::FewShotSources)
        ));
        let mut mixed: Vec<_> = (0..4).map(|i| exemplar(i, SourceKind::X)).collect();
        mixed.push(exemplar(4, SourceKind::Council));
        assert!(PromptSpec::few_shot("v1", mixed).validate().is_ok());
    }

    #[test]
    fn model_config_invariants() {
        let mut cfg = ModelConfig {
            model_id: "m".into(),
            backend: BackendKind::LocalInference,
            endpoint: "http://localhost:11434/v1/chat/completions".into(),
            remote_model: None,
            decoding: Decoding::default(),
            rate_limit: Some(60.0),
            retry: RetryPolicy::default(),
            api_key_env: None,
        };
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.decoding.temperature, 0.0);
        cfg.decoding.temperature = -0.1;
        assert!(matches!(cfg.validate(), Err(ConfigError::Temperature(_))));
        cfg.decoding.temperature = 0.0;
        cfg.retry.max_attempts = 0;
        assert!(matches!(cfg.validate(), Err(ConfigError::MaxAttempts)));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(PromptMode::parse("zero"), Some(PromptMode::ZeroShot));
        assert_eq!(PromptMode::parse("few-shot"), Some(PromptMode::FewShot));
        assert_eq!(PromptMode::parse("many"), None);
    }
}
