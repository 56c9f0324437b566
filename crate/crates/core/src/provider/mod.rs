//! Text-generation backends behind one async interface.
//!
//! Backends ([`MockProvider`], [`HeuristicProvider`], [`ChatCompletionsBackend`]) implement [`Provider`] directly.
//! [`ProviderClient`] wraps any backend with the on-disk response cache, a sliding-window
//! rate limiter, a concurrency bound and retry with exponential backoff.

mod cache;
mod chat;
mod client;
mod heuristic;
mod mock;
mod ratelimit;

use std::collections::BTreeMap;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::ResponseCache;
pub use chat::ChatCompletionsBackend;
pub use client::ProviderClient;
pub use heuristic::{HeuristicProvider, HeuristicRules};
pub use mock::{Matcher, MockProvider, ScriptEntry};
pub use ratelimit::RateLimiter;

pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub top_p: f64,
    pub n_samples: u32,
    pub model_id: String,
    /// Sampling seed, set for stochastic requests so each sample has its own cache entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    /// A deterministic request (temperature 0, top-p 1, 1024 tokens, one sample).
    pub fn new(model_id: impl Into<String>, system: impl Into<String>, user: impl Into<String>) -> Self {
        GenerationRequest {
            system_prompt: system.into(),
            user_prompt: user.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            top_p: 1.0,
            n_samples: 1,
            model_id: model_id.into(),
            seed: None,
        }
    }

    pub fn with_sampling(mut self, temperature: f64, n_samples: u32, seed: Option<u64>) -> Self {
        self.temperature = temperature;
        self.n_samples = n_samples;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |m: String| Err(ProviderError::InvalidRequest(m));
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be a finite value >= 0", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p {} must lie in (0, 1]", self.top_p));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        if self.n_samples == 0 {
            return bad("n_samples must be positive".into());
        }
        if self.temperature == 0.0 && self.n_samples > 1 {
            return bad(format!(
                "{} samples requested at temperature 0; sampling needs temperature > 0",
                self.n_samples
            ));
        }
        if self.model_id.is_empty() {
            return bad("model_id is empty".into());
        }
        Ok(())
    }

    /// Content digest over every request field (SHA-256, lowercase hex).
    pub fn cache_key(&self) -> String {
        cache_key(self)
    }
}

/// SHA-256 over a length-prefixed encoding of every request field.
///
/// Floats are hashed through their IEEE-754 bit patterns so the digest is identical on every
/// platform.
pub fn cache_key(request: &GenerationRequest) -> String {
    let mut hasher = Sha256::new();
    let mut field = |name: &str, bytes: &[u8]| {
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    };
    field("v", b"truthcue-request-1");
    field("model_id", request.model_id.as_bytes());
    field("system_prompt", request.system_prompt.as_bytes());
    field("user_prompt", request.user_prompt.as_bytes());
    field("temperature", &request.temperature.to_bits().to_le_bytes());
    field("max_tokens", &request.max_tokens.to_le_bytes());
    field("top_p", &request.top_p.to_bits().to_le_bytes());
    field("n_samples", &request.n_samples.to_le_bytes());
    match request.seed {
        Some(seed) => field("seed", &seed.to_le_bytes()),
        None => field("seed", b""),
    }
    hex::encode(hasher.finalize())
}

/// Digest of a result's completions, used for audit trails.
pub fn completions_digest(completions: &[String]) -> String {
    let mut hasher = Sha256::new();
    for c in completions {
        hasher.update((c.len() as u64).to_le_bytes());
        hasher.update(c.as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub completions: Vec<String>,
    #[serde(default)]
    pub provider_meta: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub cache_hit: bool,
}

impl GenerationResult {
    pub fn new(completions: Vec<String>) -> Self {
        GenerationResult {
            completions,
            provider_meta: BTreeMap::new(),
            cache_hit: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("transport failure after {attempts} attempt(s) (last status {status:?}): {message}")]
    Transport {
        status: Option<u16>,
        message: String,
        attempts: u32,
    },
    #[error("authentication rejected by provider (status {status})")]
    Authentication { status: u16 },
    #[error("credentials not available: environment variable `{var}` is unset")]
    MissingCredentials { var: String },
    #[error("prompt of {prompt_chars} characters rejected as too long: {message}")]
    OversizePrompt { prompt_chars: usize, message: String },
    #[error("request rejected with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no script entry matches request (user prompt starts {excerpt:?})")]
    ScriptedMiss { excerpt: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

impl ProviderError {
    /// Network failures, timeouts, 429 and 5xx.
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Transport { status, .. } => match status {
                None => true,
                Some(s) => *s == 429 || *s == 408 || (500..600).contains(s),
            },
            _ => false,
        }
    }
}

#[async_trait]
pub trait Provider: Send + Sync {
    async fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError>;
}

#[async_trait]
impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    async fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        (**self).generate(request).await
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub credentials_env: String,
    pub max_concurrent: usize,
    pub requests_per_minute: u32,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub request_timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            credentials_env: "OPENAI_API_KEY".into(),
            max_concurrent: 4,
            requests_per_minute: 60,
            max_retries: 4,
            backoff_base_ms: 500,
            request_timeout_secs: 120,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.max_concurrent == 0 {
            return Err(ProviderError::InvalidRequest("max_concurrent must be >= 1".into()));
        }
        if self.requests_per_minute == 0 {
            return Err(ProviderError::InvalidRequest("requests_per_minute must be >= 1".into()));
        }
        Ok(())
    }

    pub fn backoff_base(&self) -> Duration {
        Duration::from_millis(self.backoff_base_ms)
    }

    pub fn is_remote(&self) -> bool {
        self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")
    }

    pub fn resolve_credentials(&self) -> Result<String, ProviderError> {
        std::env::var(&self.credentials_env).map_err(|_| ProviderError::MissingCredentials {
            var: self.credentials_env.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> GenerationRequest {
        GenerationRequest::new(
            "gpt-4",
            "You are an expert detective.",
            "Name: Participant_1\nAffidavit: A.\n",
        )
    }

    #[test]
    fn defaults_follow_deterministic_hyperparameters() {
        let r = fixture();
        assert_eq!(r.temperature, 0.0);
        assert_eq!(r.max_tokens, 1024);
        assert_eq!(r.top_p, 1.0);
        assert_eq!(r.n_samples, 1);
        r.validate().unwrap();
    }

    #[test]
    fn sampling_at_zero_temperature_rejected() {
        let r = fixture().with_sampling(0.0, 3, None);
        assert!(matches!(r.validate(), Err(ProviderError::InvalidRequest(_))));
        fixture().with_sampling(0.7, 3, Some(1)).validate().unwrap();
    }

    #[test]
    fn cache_key_covers_every_field() {
        let base = fixture();
        assert_eq!(base.cache_key(), fixture().cache_key());
        assert_eq!(base.cache_key().len(), 64);
        let mut variants = vec![];
        let mut r = base.clone();
        r.temperature = 0.2;
        variants.push(r);
        let mut r = base.clone();
        r.model_id = "gpt-3.5".into();
        variants.push(r);
        let mut r = base.clone();
        r.top_p = 0.95;
        variants.push(r);
        let mut r = base.clone();
        r.max_tokens = 512;
        variants.push(r);
        let mut r = base.clone();
        r.seed = Some(0);
        variants.push(r);
        let mut r = base.clone();
        r.system_prompt.push(' ');
        variants.push(r);
        for v in variants {
            assert_ne!(v.cache_key(), base.cache_key());
        }
    }

    #[test]
    fn cache_key_of_fixture_is_pinned() {
        assert_eq!(
            fixture().cache_key(),
            "f5b7f9ceb234cc885a85f4b548ce76d72ccd3421c977f31188dafdeafa45335c"
        );
    }

    #[test]
    fn field_boundaries_are_unambiguous() {
        let a = GenerationRequest::new("m", "ab", "c");
        let b = GenerationRequest::new("m", "a", "bc");
        assert_ne!(a.cache_key(), b.cache_key());
    }

    #[test]
    fn transient_classification() {
        let t = |s| ProviderError::Transport { status: s, message: String::new(), attempts: 1 };
        assert!(t(Some(429)).is_transient());
        assert!(t(Some(503)).is_transient());
        assert!(t(None).is_transient());
        assert!(!t(Some(404)).is_transient());
        assert!(!ProviderError::Authentication { status: 401 }.is_transient());
    }
}
