use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::Deserialize;

use super::{GenerationRequest, GenerationResult, Provider, ProviderError};

type Predicate = Arc<dyn Fn(&GenerationRequest) -> bool + Send + Sync>;
type Responder = Arc<dyn Fn(&GenerationRequest) -> Option<Vec<String>> + Send + Sync>;

#[derive(Clone)]
pub enum Matcher {
    /// Literal substring of the system or user prompt.
    Contains(String),
    /// Every literal must occur somewhere in the system or user prompt.
    ContainsAll(Vec<String>),
    Predicate(Predicate),
}

impl Matcher {
    pub fn contains(s: impl Into<String>) -> Self {
        Matcher::Contains(s.into())
    }

    pub fn predicate(f: impl Fn(&GenerationRequest) -> bool + Send + Sync + 'static) -> Self {
        Matcher::Predicate(Arc::new(f))
    }

    fn matches(&self, request: &GenerationRequest) -> bool {
        let has = |s: &str| request.user_prompt.contains(s) || request.system_prompt.contains(s);
        match self {
            Matcher::Contains(s) => has(s),
            Matcher::ContainsAll(all) => all.iter().all(|s| has(s)),
            Matcher::Predicate(f) => f(request),
        }
    }
}

impl fmt::Debug for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Matcher::Contains(s) => write!(f, "Contains({s:?})"),
            Matcher::ContainsAll(s) => write!(f, "ContainsAll({s:?})"),
            Matcher::Predicate(_) => f.write_str("Predicate(..)"),
        }
    }
}

#[derive(Clone)]
enum Rule {
    Scripted(Matcher, Vec<String>),
    Dynamic(Responder),
}

#[derive(Debug, Clone, Deserialize)]
pub struct ScriptEntry {
    /// All of these literals must appear in the prompt.
    pub contains: Vec<String>,
    pub completions: Vec<String>,
}

/// Deterministic offline provider. The first matching rule answers; an unmatched request is a
/// [`ProviderError::ScriptedMiss`].
///
/// A rule answering with `k` completions serves `n_samples` of them in script order, cycling
/// when more samples are requested than scripted.
#[derive(Clone, Default)]
pub struct MockProvider {
    rules: Vec<Rule>,
    calls: Arc<AtomicUsize>,
    log: Arc<Mutex<Vec<GenerationRequest>>>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_entry(mut self, matcher: Matcher, completions: Vec<String>) -> Self {
        assert!(!completions.is_empty(), "script entries need at least one completion");
        self.rules.push(Rule::Scripted(matcher, completions));
        self
    }

    pub fn on(self, needle: impl Into<String>, completion: impl Into<String>) -> Self {
        self.with_entry(Matcher::contains(needle), vec![completion.into()])
    }

    /// A rule computed from the request; `None` falls through to later rules.
    pub fn with_responder(
        mut self,
        f: impl Fn(&GenerationRequest) -> Option<Vec<String>> + Send + Sync + 'static,
    ) -> Self {
        self.rules.push(Rule::Dynamic(Arc::new(f)));
        self
    }

    /// Loads a JSON array of `{"contains": [...], "completions": [...]}` entries.
    pub fn from_script_file(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let entries: Vec<ScriptEntry> = serde_json::from_str(&text)
            .map_err(|e| ProviderError::InvalidRequest(format!("mock script: {e}")))?;
        Ok(entries.into_iter().fold(MockProvider::new(), |m, e| {
            m.with_entry(Matcher::ContainsAll(e.contains), e.completions)
        }))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<GenerationRequest> {
        self.log.lock().unwrap().clone()
    }

    fn answer(&self, request: &GenerationRequest) -> Option<Vec<String>> {
        for rule in &self.rules {
            match rule {
                Rule::Scripted(m, completions) if m.matches(request) => {
                    return Some(completions.clone());
                }
                Rule::Dynamic(f) => {
                    if let Some(c) = f(request) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        None
    }
}

#[async_trait]
impl Provider for MockProvider {
    async fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log.lock().unwrap().push(request.clone());
        let scripted = self.answer(request).ok_or_else(|| ProviderError::ScriptedMiss {
            excerpt: request.user_prompt.chars().take(80).collect(),
        })?;
        if scripted.is_empty() {
            return Err(ProviderError::MalformedResponse("responder returned no completions".into()));
        }
        let completions = scripted
            .iter()
            .cycle()
            .take(request.n_samples as usize)
            .cloned()
            .collect();
        let mut result = GenerationResult::new(completions);
        result
            .provider_meta
            .insert("backend".into(), serde_json::Value::from("mock"));
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(user: &str) -> GenerationRequest {
        GenerationRequest::new("mock", "You are an expert detective.", user)
    }

    #[tokio::test]
    async fn scripted_answer_is_returned_verbatim() {
        let mock = MockProvider::new().on("Conversations:", "### Number Two");
        let r = mock.generate(&req("Conversations:\nQ: hi")).await.unwrap();
        assert_eq!(r.completions, vec!["### Number Two".to_string()]);
        assert!(!r.cache_hit);
        assert_eq!(mock.calls(), 1);
    }

    #[tokio::test]
    async fn empty_script_misses() {
        let mock = MockProvider::new();
        assert!(matches!(
            mock.generate(&req("anything")).await,
            Err(ProviderError::ScriptedMiss { .. })
        ));
    }

    #[tokio::test]
    async fn first_matching_entry_wins() {
        let mock = MockProvider::new()
            .on("Half-truths", "Label: half-truth")
            .on("Half", "never");
        let r = mock.generate(&req("**Half-truths**: ...")).await.unwrap();
        assert_eq!(r.completions[0], "Label: half-truth");
    }

    #[tokio::test]
    async fn samples_follow_script_order() {
        let samples: Vec<String> = (1..=5).map(|i| format!("sample {i}")).collect();
        let mock = MockProvider::new().with_entry(Matcher::contains("x"), samples.clone());
        let r = mock
            .generate(&req("x").with_sampling(0.7, 5, Some(1)))
            .await
            .unwrap();
        assert_eq!(r.completions, samples);
    }

    #[tokio::test]
    async fn predicate_matchers_see_request_fields() {
        let mock = MockProvider::new()
            .with_entry(Matcher::predicate(|r| r.model_id == "g"), vec!["g".into()])
            .with_entry(Matcher::predicate(|_| true), vec!["f".into()]);
        let mut r = req("u");
        r.model_id = "g".into();
        assert_eq!(mock.generate(&r).await.unwrap().completions[0], "g");
        assert_eq!(mock.generate(&req("u")).await.unwrap().completions[0], "f");
    }
}
