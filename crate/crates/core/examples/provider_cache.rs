//! Wraps a backend in the caching, rate-limited client. The second identical request is
//! answered from disk and never reaches the backend.

use std::sync::Arc;

use truthcue::provider::{GenerationRequest, MockProvider, Provider, ProviderClient, ProviderConfig, ResponseCache};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let backend = Arc::new(MockProvider::new().on("capital", "Paris.\n### Number One"));
    let config = ProviderConfig { requests_per_minute: 600, ..ProviderConfig::default() };
    let client = ProviderClient::new(backend.clone(), config, Some(ResponseCache::new(dir.path())))?;

    let request = GenerationRequest::new("demo-model", "Be brief.", "What is the capital of France?");
    let first = client.generate(&request).await?;
    let second = client.generate(&request).await?;
    println!("first:  cache_hit={} {:?}", first.cache_hit, first.completions[0]);
    println!("second: cache_hit={} {:?}", second.cache_hit, second.completions[0]);
    println!("backend calls: {}", backend.calls());
    println!("cache entry: {}", client.cache().unwrap().path_for(&request).display());

    // Sampling parameters are part of the key, so this is a fresh call.
    client.generate(&request.clone().with_sampling(0.7, 1, Some(3))).await?;
    println!("backend calls after a sampled request: {}", backend.calls());
    Ok(())
}
