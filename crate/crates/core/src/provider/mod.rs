//! Candidate generation backends.

mod extract;
mod http;
mod prompt;
mod replay;

pub use extract::{extract_code_block, extract_code_block_any, fenced_blocks, FencedBlock};
pub use http::HttpChatProvider;
pub use prompt::{
    build_prompt, fingerprint, PromptTemplate, DEFAULT_GENERATION_TEMPLATE, DEFAULT_TEST_TEMPLATE,
};
pub use replay::ReplayProvider;

use crate::task::Task;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("environment variable {0} holding the API key is not set")]
    MissingApiKey(String),
    #[error("provider {label} returned HTTP {status}: {body}")]
    Http {
        label: String,
        status: u16,
        body: String,
    },
    #[error("provider {label} transport failure: {message}")]
    Transport { label: String, message: String },
    #[error("provider {label} has no responses for task {task_id}")]
    Unavailable { label: String, task_id: String },
    #[error("provider {label} returned a malformed response: {message}")]
    Malformed { label: String, message: String },
}

impl ProviderError {
    /// Whether the retry policy should try again after this error.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Http { status, .. } => *status == 429 || *status >= 500,
            ProviderError::Transport { .. } => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    HttpChat,
    Replay,
}

/// Configuration of one generation backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderHandle {
    pub kind: ProviderKind,
    /// Label recorded on candidates; also the replay subdirectory name.
    pub label: String,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_request_timeout")]
    pub request_timeout_s: f64,
    #[serde(default = "default_rate_limit")]
    pub rate_limit_rpm: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub replay_root: Option<PathBuf>,
}

fn default_max_retries() -> u32 {
    3
}
fn default_request_timeout() -> f64 {
    120.0
}
fn default_rate_limit() -> f64 {
    60.0
}
fn default_temperature() -> f64 {
    0.2
}

impl ProviderHandle {
    pub fn replay(label: impl Into<String>, root: impl Into<PathBuf>) -> Self {
        ProviderHandle {
            kind: ProviderKind::Replay,
            label: label.into(),
            endpoint: None,
            model_name: None,
            api_key_env: None,
            max_retries: default_max_retries(),
            request_timeout_s: default_request_timeout(),
            rate_limit_rpm: default_rate_limit(),
            temperature: default_temperature(),
            replay_root: Some(root.into()),
        }
    }

    pub fn http_chat(
        label: impl Into<String>,
        endpoint: impl Into<String>,
        model_name: impl Into<String>,
    ) -> Self {
        ProviderHandle {
            kind: ProviderKind::HttpChat,
            endpoint: Some(endpoint.into()),
            model_name: Some(model_name.into()),
            replay_root: None,
            ..Self::replay(label, "")
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.label.trim().is_empty() {
            return Err(ProviderError::Config("provider label is empty".into()));
        }
        match self.kind {
            ProviderKind::HttpChat => {
                if self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
                    return Err(ProviderError::Config(format!("{}: http_chat requires endpoint", self.label)));
                }
                if self.model_name.as_deref().is_none_or(|m| m.trim().is_empty()) {
                    return Err(ProviderError::Config(format!("{}: http_chat requires model_name", self.label)));
                }
            }
            ProviderKind::Replay => {
                if self.replay_root.as_ref().is_none_or(|r| r.as_os_str().is_empty()) {
                    return Err(ProviderError::Config(format!("{}: replay requires replay_root", self.label)));
                }
            }
        }
        if self.rate_limit_rpm.is_nan() || self.rate_limit_rpm <= 0.0 {
            return Err(ProviderError::Config(format!("{}: rate_limit must be > 0", self.label)));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ProviderError::Config(format!("{}: temperature must be >= 0", self.label)));
        }
        if self.request_timeout_s.is_nan() || self.request_timeout_s <= 0.0 {
            return Err(ProviderError::Config(format!("{}: request_timeout must be > 0", self.label)));
        }
        Ok(())
    }

    /// Instantiates the backend described by this handle.
    pub fn connect(&self) -> Result<Box<dyn CompletionBackend>, ProviderError> {
        self.validate()?;
        Ok(match self.kind {
            ProviderKind::Replay => Box::new(ReplayProvider::new(
                self.label.clone(),
                self.replay_root.clone().unwrap_or_default(),
            )),
            ProviderKind::HttpChat => Box::new(HttpChatProvider::new(self)?),
        })
    }
}

/// One raw response returned by a backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawResponse {
    pub sample_index: usize,
    pub text: String,
}

pub trait CompletionBackend: Send + Sync {
    fn label(&self) -> &str;

    /// Requests up to `n` completions of `prompt` for `task_id`.
    fn complete(&self, task_id: &str, prompt: &str, n: usize) -> Result<Vec<RawResponse>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidateSolution {
    pub task_id: String,
    pub source_code: String,
    pub provider_label: String,
    pub sample_index: usize,
    pub prompt_fingerprint: String,
}

impl CandidateSolution {
    /// Key unique within a generation batch.
    pub fn key(&self) -> (String, String, usize) {
        (self.task_id.clone(), self.provider_label.clone(), self.sample_index)
    }
}

#[derive(Debug, Default)]
pub struct GenerationOutcome {
    pub candidates: Vec<CandidateSolution>,
    /// Providers that failed for this task after retries.
    pub failures: Vec<(String, String)>,
    pub generation_failed: bool,
}

/// Asks every provider for up to `n_per_provider` candidates.
pub fn generate_candidates(
    task: &Task,
    providers: &[Box<dyn CompletionBackend>],
    n_per_provider: usize,
    template: &PromptTemplate,
) -> Result<GenerationOutcome, ProviderError> {
    if n_per_provider == 0 {
        return Err(ProviderError::Config("n_per_provider must be >= 1".into()));
    }
    let prompt = build_prompt(task, template)?;
    let fp = fingerprint(&prompt);
    let mut out = GenerationOutcome::default();
    for provider in providers {
        match provider.complete(&task.id, &prompt, n_per_provider) {
            Ok(responses) => {
                for resp in responses.into_iter().take(n_per_provider) {
                    if let Some(code) = extract_code_block(&resp.text, task.language) {
                        out.candidates.push(CandidateSolution {
                            task_id: task.id.clone(),
                            source_code: code,
                            provider_label: provider.label().to_string(),
                            sample_index: resp.sample_index,
                            prompt_fingerprint: fp.clone(),
                        });
                    }
                }
            }
            Err(e) => {
                log::warn!("task {}: provider {} failed: {e}", task.id, provider.label());
                out.failures.push((provider.label().to_string(), e.to_string()));
            }
        }
    }
    out.generation_failed = !providers.is_empty() && out.failures.len() == providers.len();
    Ok(out)
}
