use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;

use super::{GenerationRequest, GenerationResult, Provider, ProviderConfig, ProviderError};

/// Chat-completions style HTTP backend (`messages` with system and user roles, bearer auth).
pub struct ChatCompletionsBackend {
    http: reqwest::Client,
    endpoint: String,
    api_key: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

impl ChatCompletionsBackend {
    /// Resolves credentials from the configured environment variable.
    pub fn from_config(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let api_key = config.resolve_credentials()?;
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: &ProviderConfig, api_key: String) -> Result<Self, ProviderError> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_secs))
            .build()
            .map_err(|e| ProviderError::InvalidRequest(format!("http client: {e}")))?;
        Ok(ChatCompletionsBackend {
            http,
            endpoint: config.endpoint.clone(),
            api_key,
        })
    }

    pub fn request_body(request: &GenerationRequest) -> serde_json::Value {
        let mut body = json!({
            "model": request.model_id,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "top_p": request.top_p,
            "n": request.n_samples,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

fn classify(status: u16, body: String, request: &GenerationRequest) -> ProviderError {
    let lower = body.to_ascii_lowercase();
    match status {
        401 | 403 => ProviderError::Authentication { status },
        413 => ProviderError::OversizePrompt {
            prompt_chars: request.system_prompt.len() + request.user_prompt.len(),
            message: body,
        },
        400 if lower.contains("context_length") || lower.contains("maximum context") => {
            ProviderError::OversizePrompt {
                prompt_chars: request.system_prompt.len() + request.user_prompt.len(),
                message: body,
            }
        }
        408 | 429 | 500..=599 => ProviderError::Transport {
            status: Some(status),
            message: body,
            attempts: 1,
        },
        _ => ProviderError::Rejected { status, message: body },
    }
}

#[async_trait]
impl Provider for ChatCompletionsBackend {
    async fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        let started = Instant::now();
        let response = self
            .http
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&Self::request_body(request))
            .send()
            .await
            .map_err(|e| ProviderError::Transport {
                status: e.status().map(|s| s.as_u16()),
                message: e.to_string(),
                attempts: 1,
            })?;
        let status = response.status().as_u16();
        let text = response.text().await.map_err(|e| ProviderError::Transport {
            status: Some(status),
            message: e.to_string(),
            attempts: 1,
        })?;
        if !(200..300).contains(&status) {
            return Err(classify(status, text, request));
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        let completions: Vec<String> = parsed
            .choices
            .into_iter()
            .map(|c| c.message.content.unwrap_or_default())
            .collect();
        let mut result = GenerationResult::new(completions);
        result.provider_meta.insert(
            "latency_ms".into(),
            json!(started.elapsed().as_millis() as u64),
        );
        if let Some(usage) = parsed.usage {
            result.provider_meta.insert("usage".into(), usage);
        }
        Ok(result)
    }
}
