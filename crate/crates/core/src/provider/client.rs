use std::sync::Arc;

use async_trait::async_trait;
use tokio::sync::Semaphore;
use tracing::{debug, warn};

use super::{
    GenerationRequest, GenerationResult, Provider, ProviderConfig, ProviderError, RateLimiter,
    ResponseCache,
};

/// Cache, rate limit, concurrency bound and retry around a backend.
///
/// Cache hits bypass the limiter and never reach the backend. Only transient failures
/// (network, 408, 429, 5xx) are retried, with delays `base * 2^attempt`.
#[derive(Clone)]
pub struct ProviderClient {
    backend: Arc<dyn Provider>,
    config: ProviderConfig,
    cache: Option<ResponseCache>,
    limiter: Arc<RateLimiter>,
    in_flight: Arc<Semaphore>,
}

impl ProviderClient {
    pub fn new(
        backend: Arc<dyn Provider>,
        config: ProviderConfig,
        cache: Option<ResponseCache>,
    ) -> Result<Self, ProviderError> {
        config.validate()?;
        Ok(ProviderClient {
            backend,
            limiter: Arc::new(RateLimiter::per_minute(config.requests_per_minute)),
            in_flight: Arc::new(Semaphore::new(config.max_concurrent)),
            config,
            cache,
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    async fn call_with_retry(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        let _permit = self
            .in_flight
            .acquire()
            .await
            .expect("semaphore is never closed");
        let mut attempt: u32 = 0;
        loop {
            self.limiter.acquire().await;
            match self.backend.generate(request).await {
                Ok(result) => return Ok(result),
                Err(e) if e.is_transient() && attempt < self.config.max_retries => {
                    let delay = self.config.backoff_base() * 2u32.saturating_pow(attempt);
                    warn!(attempt, ?delay, error = %e, "transient provider failure, retrying");
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
                Err(ProviderError::Transport { status, message, .. }) => {
                    return Err(ProviderError::Transport {
                        status,
                        message,
                        attempts: attempt + 1,
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[async_trait]
impl Provider for ProviderClient {
    async fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        request.validate()?;
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(request)? {
                debug!(key = %request.cache_key(), "cache hit");
                return Ok(hit);
            }
        }
        let result = self.call_with_retry(request).await?;
        if result.completions.len() != request.n_samples as usize {
            return Err(ProviderError::MalformedResponse(format!(
                "{} completions for {} requested samples",
                result.completions.len(),
                request.n_samples
            )));
        }
        if let Some(cache) = &self.cache {
            cache.put(request, &result)?;
        }
        Ok(result)
    }
}
