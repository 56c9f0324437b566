//! Detection variants over one session: end-to-end task prompt (optionally with
//! chain-of-thought), the cue bottleneck `f(g(S))` with ablations and independent or sequential
//! cue derivation, and self-consistency voting over sampled predictions.

use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;
use std::sync::Arc;

use futures::future::{join_all, try_join_all};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::corpus::{segment_snippets, ContestantLabel, CorpusError, Session, Snippet};
use crate::prompting::{
    append_cot, build_bottleneck_prompt_within, build_discriminator_prompt, build_task_prompt,
    interpret_ranked_answer, parse_control_verdict, with_format_reminder, AnnotatedSnippet,
    ControlKind, ControlLabel, ControlValue, DerivationMode, PromptBundle, PromptError,
    RankedAnswer, Verdict, TEMPLATE_VERSION,
};
use crate::provider::{
    completions_digest, GenerationRequest, Provider, ProviderError, DEFAULT_MAX_TOKENS,
};

pub const DEFAULT_SC_K: u32 = 5;
pub const DEFAULT_SC_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Deserialization canonicalizes ablations through [`Variant::bottleneck_with`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "VariantWire")]
pub enum Variant {
    Base,
    #[serde(rename = "cot")]
    CoT,
    Bottleneck,
    BottleneckAblated { controls: BTreeSet<ControlKind> },
    SelfConsistency { inner: Box<Variant>, k: u32 },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum VariantWire {
    Base,
    #[serde(rename = "cot")]
    CoT,
    Bottleneck,
    BottleneckAblated { controls: BTreeSet<ControlKind> },
    SelfConsistency { inner: Box<Variant>, k: u32 },
}

impl TryFrom<VariantWire> for Variant {
    type Error = PipelineError;

    fn try_from(w: VariantWire) -> Result<Self, Self::Error> {
        Ok(match w {
            VariantWire::Base => Variant::Base,
            VariantWire::CoT => Variant::CoT,
            VariantWire::Bottleneck => Variant::Bottleneck,
            VariantWire::BottleneckAblated { controls } => Variant::bottleneck_with(controls)?,
            VariantWire::SelfConsistency { inner, k } => Variant::SelfConsistency { inner, k },
        })
    }
}

impl Variant {
    /// Ablation over `controls`. The full set is the plain bottleneck, so both spellings run
    /// identical requests and produce identical predictions.
    pub fn bottleneck_with(controls: BTreeSet<ControlKind>) -> Result<Variant, PipelineError> {
        if controls.is_empty() {
            return Err(PipelineError::Precondition("ablation keeps no controls".into()));
        }
        if controls == ControlKind::all() {
            Ok(Variant::Bottleneck)
        } else {
            Ok(Variant::BottleneckAblated { controls })
        }
    }

    pub fn without(control: ControlKind) -> Variant {
        let mut controls = ControlKind::all();
        controls.remove(&control);
        Variant::BottleneckAblated { controls }
    }

    pub fn is_bottleneck_family(&self) -> bool {
        match self {
            Variant::Bottleneck | Variant::BottleneckAblated { .. } => true,
            Variant::SelfConsistency { inner, .. } => inner.is_bottleneck_family(),
            _ => false,
        }
    }

    pub fn controls(&self) -> BTreeSet<ControlKind> {
        match self {
            Variant::Bottleneck => ControlKind::all(),
            Variant::BottleneckAblated { controls } => controls.clone(),
            Variant::SelfConsistency { inner, .. } => inner.controls(),
            _ => BTreeSet::new(),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Variant::Base => "base".into(),
            Variant::CoT => "cot".into(),
            Variant::Bottleneck => "bottleneck".into(),
            Variant::BottleneckAblated { controls } => {
                let missing: Vec<_> = ControlKind::ALL
                    .iter()
                    .filter(|k| !controls.contains(k))
                    .map(|k| k.slug())
                    .collect();
                if missing.len() == 1 {
                    format!("bottleneck-wo-{}", missing[0])
                } else {
                    let kept: Vec<_> = controls.iter().map(|k| k.slug()).collect();
                    format!("bottleneck-only-{}", kept.join("+"))
                }
            }
            Variant::SelfConsistency { inner, k } => format!("sc{k}-{}", inner.id()),
        }
    }
}

fn default_mode() -> DerivationMode {
    DerivationMode::Sequential
}

fn default_sc_temperature() -> f64 {
    DEFAULT_SC_TEMPERATURE
}

fn default_max_tokens() -> u32 {
    DEFAULT_MAX_TOKENS
}

/// Everything that selects one cell of the experiment matrix for a single model pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub variant: Variant,
    #[serde(default = "default_mode")]
    pub mode: DerivationMode,
    #[serde(default)]
    pub shots: usize,
    #[serde(default = "default_sc_temperature")]
    pub sc_temperature: f64,
    /// Model for the task prompt or the discriminator.
    pub model_id: String,
    /// Model for cue extraction; defaults to `model_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_budget: Option<usize>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Base seed for self-consistency sample bookkeeping.
    #[serde(default)]
    pub seed: u64,
}

impl VariantConfig {
    pub fn new(variant: Variant, model_id: impl Into<String>) -> Self {
        VariantConfig {
            variant,
            mode: DerivationMode::Sequential,
            shots: 0,
            sc_temperature: DEFAULT_SC_TEMPERATURE,
            model_id: model_id.into(),
            g_model_id: None,
            token_budget: None,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: 0,
        }
    }

    pub fn g_model(&self) -> &str {
        self.g_model_id.as_deref().unwrap_or(&self.model_id)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Precondition(m));
        if !matches!(self.shots, 0 | 2) {
            return fail(format!("shots must be 0 or 2, got {}", self.shots));
        }
        match &self.variant {
            Variant::BottleneckAblated { controls } => {
                if controls.is_empty() || controls.len() == ControlKind::ALL.len() {
                    return fail("ablation subsets must be proper and nonempty".into());
                }
            }
            Variant::SelfConsistency { inner, k } => {
                if *k == 0 {
                    return fail("self-consistency needs k >= 1".into());
                }
                if matches!(**inner, Variant::SelfConsistency { .. }) {
                    return fail("self-consistency cannot be nested".into());
                }
                if *k > 1 && self.sc_temperature <= 0.0 {
                    return fail("self-consistency sampling needs temperature > 0".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Identifier of this cell in run directories and report tables.
    pub fn cell_id(&self) -> String {
        let mut id = self.variant.id();
        if self.variant.is_bottleneck_family() && self.mode == DerivationMode::Independent {
            id.push_str("-independent");
        }
        if self.shots > 0 {
            id.push_str(&format!("-{}shot", self.shots));
        }
        let model = match &self.g_model_id {
            Some(g) if self.variant.is_bottleneck_family() && g != &self.model_id => {
                format!("f-{}_g-{}", self.model_id, g)
            }
            _ => self.model_id.clone(),
        };
        let model: String = model
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '_') { c } else { '_' })
            .collect();
        format!("{id}__{model}")
    }

    fn inner(&self) -> VariantConfig {
        match &self.variant {
            Variant::SelfConsistency { inner, .. } => VariantConfig {
                variant: (**inner).clone(),
                ..self.clone()
            },
            _ => self.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlAnnotation {
    pub snippet_index: usize,
    pub contestant: ContestantLabel,
    pub control: ControlValue,
    pub rationale: String,
    pub mode: DerivationMode,
    /// Set when the completion could not be read even after one re-query.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub unparsed: bool,
}

/// One provider call made while producing a prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub stage: String,
    pub request_digest: String,
    pub response_digest: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub requery: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_model_id: Option<String>,
    pub template_version: String,
    pub shots: usize,
    pub calls: Vec<CallRecord>,
}

impl Provenance {
    pub fn requeries(&self) -> usize {
        self.calls.iter().filter(|c| c.requery).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub session_id: String,
    pub variant: Variant,
    /// Absent when the output could not be parsed (counted as incorrect).
    pub ranking: Option<[ContestantLabel; 3]>,
    pub top1: Option<ContestantLabel>,
    pub explanation: String,
    pub annotations: Vec<ControlAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid_output: Option<String>,
    pub provenance: Provenance,
}

impl Prediction {
    fn ranked(session_id: &str, variant: Variant, answer: RankedAnswer, provenance: Provenance) -> Self {
        Prediction {
            session_id: session_id.to_string(),
            variant,
            ranking: Some(answer.ranking),
            top1: Some(answer.ranking[0]),
            explanation: answer.explanation,
            annotations: Vec::new(),
            invalid_output: None,
            provenance,
        }
    }

    fn invalid(session_id: &str, variant: Variant, reason: String, provenance: Provenance) -> Self {
        Prediction {
            session_id: session_id.to_string(),
            variant,
            ranking: None,
            top1: None,
            explanation: String::new(),
            annotations: Vec::new(),
            invalid_output: Some(reason),
            provenance,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.ranking.is_some()
    }

    /// 1-based position of `label` in the ranking.
    pub fn rank_of(&self, label: ContestantLabel) -> Option<usize> {
        self.ranking
            .as_ref()
            .and_then(|r| r.iter().position(|l| *l == label))
            .map(|p| p + 1)
    }

    pub fn is_correct(&self, truth: ContestantLabel) -> bool {
        self.top1 == Some(truth)
    }
}

/// Settings for the cue-extraction stage.
#[derive(Debug, Clone)]
pub struct ExtractConfig {
    pub model_id: String,
    pub max_tokens: u32,
    pub token_budget: Option<usize>,
}

impl ExtractConfig {
    fn from_variant(cfg: &VariantConfig) -> Self {
        ExtractConfig {
            model_id: cfg.g_model().to_string(),
            max_tokens: cfg.max_tokens,
            token_budget: cfg.token_budget,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub annotations: Vec<ControlAnnotation>,
    pub calls: Vec<CallRecord>,
}

/// Sampling parameters handed to each self-consistency run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub index: u32,
    pub k: u32,
    pub temperature: f64,
}

/// Fallback label for a cue whose completion could not be read: the non-deceptive side.
fn unparsed_label(kind: ControlKind) -> ControlLabel {
    match kind {
        ControlKind::Entailment => ControlLabel::Neutral,
        ControlKind::Ambiguity => ControlLabel::Unambiguous,
        ControlKind::Overconfidence => ControlLabel::Neutral,
        ControlKind::HalfTruths => ControlLabel::NoHalfTruth,
    }
}

fn rationale_of(completion: &str) -> String {
    completion
        .lines()
        .find_map(|l| {
            let t = l.trim().trim_start_matches(['*', '-', ' ']);
            let lower = t.to_ascii_lowercase();
            lower
                .starts_with("rationale")
                .then(|| t["rationale".len()..].trim_start_matches(['*', ':', ' ']).trim().to_string())
        })
        .unwrap_or_else(|| completion.trim().to_string())
}

/// Majority vote over valid samples.
///
/// The winner is the most frequent top-1 label (ties to the lowest label). The remaining labels
/// follow by Borda count over the sample rankings (2/1/0 points), ties again by label order. The
/// explanation comes from the first sample whose top-1 is the winner. `None` when no sample is
/// valid.
pub fn majority_vote(samples: &[Prediction]) -> Option<([ContestantLabel; 3], String)> {
    let valid: Vec<&Prediction> = samples.iter().filter(|p| p.is_valid()).collect();
    if valid.is_empty() {
        return None;
    }
    let mut votes = [0usize; 3];
    let mut borda = [0usize; 3];
    for p in &valid {
        let ranking = p.ranking.unwrap();
        votes[ranking[0].index()] += 1;
        for (pos, label) in ranking.iter().enumerate() {
            borda[label.index()] += 2 - pos;
        }
    }
    let winner = ContestantLabel::ALL
        .into_iter()
        .max_by_key(|l| (votes[l.index()], std::cmp::Reverse(l.index())))
        .unwrap();
    let mut rest: Vec<ContestantLabel> = ContestantLabel::ALL
        .into_iter()
        .filter(|l| *l != winner)
        .collect();
    rest.sort_by_key(|l| (std::cmp::Reverse(borda[l.index()]), l.index()));
    let explanation = valid
        .iter()
        .find(|p| p.top1 == Some(winner))
        .map(|p| p.explanation.clone())
        .unwrap_or_default();
    Some(([winner, rest[0], rest[1]], explanation))
}

/// Runs `run` once per sample and votes. `k = 1` returns the single run unchanged.
pub async fn self_consistency<F, Fut>(
    k: u32,
    temperature: f64,
    mut run: F,
) -> Result<Prediction, PipelineError>
where
    F: FnMut(SampleSpec) -> Fut,
    Fut: Future<Output = Result<Prediction, PipelineError>>,
{
    if k == 0 {
        return Err(PipelineError::Precondition("self-consistency needs k >= 1".into()));
    }
    if k > 1 && temperature <= 0.0 {
        return Err(PipelineError::Precondition(
            "self-consistency sampling needs temperature > 0".into(),
        ));
    }
    let runs = (0..k).map(|index| run(SampleSpec { index, k, temperature }));
    let mut samples = try_join_all(runs).await?;
    if k == 1 {
        return Ok(samples.pop().unwrap());
    }
    let first = samples[0].clone();
    let calls: Vec<CallRecord> = samples
        .iter()
        .flat_map(|s| s.provenance.calls.iter().cloned())
        .collect();
    let provenance = Provenance {
        calls,
        ..first.provenance.clone()
    };
    Ok(match majority_vote(&samples) {
        Some((ranking, explanation)) => Prediction {
            ranking: Some(ranking),
            top1: Some(ranking[0]),
            explanation,
            invalid_output: None,
            provenance,
            ..first
        },
        None => Prediction {
            ranking: None,
            top1: None,
            explanation: String::new(),
            invalid_output: Some(format!("all {k} samples invalid")),
            provenance,
            ..first
        },
    })
}

/// Executes variants against one provider. Demonstrations are used in order for 2-shot runs.
#[derive(Clone)]
pub struct Pipeline {
    provider: Arc<dyn Provider>,
    demos: Vec<(Session, ContestantLabel)>,
}

impl Pipeline {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Pipeline {
            provider,
            demos: Vec::new(),
        }
    }

    /// Demonstration sessions with their gold labels.
    pub fn with_demos(mut self, demos: Vec<(Session, ContestantLabel)>) -> Self {
        self.demos = demos;
        self
    }

    fn demos_for(&self, shots: usize) -> Result<&[(Session, ContestantLabel)], PipelineError> {
        self.demos.get(..shots).ok_or_else(|| {
            PipelineError::Precondition(format!(
                "{shots} shots requested but {} demonstrations configured",
                self.demos.len()
            ))
        })
    }

    fn provenance(cfg: &VariantConfig, calls: Vec<CallRecord>) -> Provenance {
        Provenance {
            model_id: cfg.model_id.clone(),
            g_model_id: cfg
                .variant
                .is_bottleneck_family()
                .then(|| cfg.g_model().to_string()),
            template_version: TEMPLATE_VERSION.to_string(),
            shots: cfg.shots,
            calls,
        }
    }

    async fn call(
        &self,
        request: &GenerationRequest,
        stage: &str,
        requery: bool,
        calls: &mut Vec<CallRecord>,
    ) -> Result<Vec<String>, PipelineError> {
        let result = self.provider.generate(request).await?;
        calls.push(CallRecord {
            stage: stage.to_string(),
            request_digest: request.cache_key(),
            response_digest: completions_digest(&result.completions),
            requery,
        });
        debug!(stage, cache_hit = result.cache_hit, "provider call");
        Ok(result.completions)
    }

    fn request(bundle: &PromptBundle, model: &str, max_tokens: u32, sample: Option<SampleSpec>, seed: u64) -> GenerationRequest {
        let mut r = GenerationRequest::new(model, bundle.system.clone(), bundle.user.clone());
        r.max_tokens = max_tokens;
        if let Some(s) = sample.filter(|s| s.k > 1) {
            r = r.with_sampling(s.temperature, 1, Some(seed.wrapping_add(s.index as u64)));
        }
        r
    }

    /// One ranked-answer call with a single format re-query.
    async fn ask_ranked(
        &self,
        bundle: &PromptBundle,
        cfg: &VariantConfig,
        stage: &str,
        sample: Option<SampleSpec>,
        calls: &mut Vec<CallRecord>,
    ) -> Result<Result<RankedAnswer, String>, PipelineError> {
        let request = Self::request(bundle, &cfg.model_id, cfg.max_tokens, sample, cfg.seed);
        let first = self.call(&request, stage, false, calls).await?;
        let err = match interpret_ranked_answer(&first[0]) {
            Ok(answer) => return Ok(Ok(answer)),
            Err(e) => e,
        };
        warn!(stage, error = %err, "unparseable answer, re-querying once");
        let retry_bundle = with_format_reminder(bundle);
        let retry = Self::request(&retry_bundle, &cfg.model_id, cfg.max_tokens, sample, cfg.seed);
        let second = self.call(&retry, stage, true, calls).await?;
        Ok(interpret_ranked_answer(&second[0]).map_err(|e2| format!("{err}; after re-query: {e2}")))
    }

    async fn run_task(
        &self,
        session: &Session,
        cfg: &VariantConfig,
        cot: bool,
        sample: Option<SampleSpec>,
    ) -> Result<Prediction, PipelineError> {
        let demos = self.demos_for(cfg.shots)?;
        let mut bundle = build_task_prompt(session, cfg.shots, demos)?;
        if cot {
            bundle = append_cot(bundle)?;
        }
        let mut calls = Vec::new();
        let outcome = self.ask_ranked(&bundle, cfg, "task", sample, &mut calls).await?;
        let provenance = Self::provenance(cfg, calls);
        Ok(match outcome {
            Ok(answer) => Prediction::ranked(&session.id, cfg.variant.clone(), answer, provenance),
            Err(reason) => Prediction::invalid(&session.id, cfg.variant.clone(), reason, provenance),
        })
    }

    pub async fn run_base(&self, session: &Session, cfg: &VariantConfig) -> Result<Prediction, PipelineError> {
        if cfg.variant != Variant::Base {
            return Err(PipelineError::Precondition(format!("run_base given {}", cfg.variant.id())));
        }
        self.run_task(session, cfg, false, None).await
    }

    pub async fn run_cot(&self, session: &Session, cfg: &VariantConfig) -> Result<Prediction, PipelineError> {
        if cfg.variant != Variant::CoT {
            return Err(PipelineError::Precondition(format!("run_cot given {}", cfg.variant.id())));
        }
        self.run_task(session, cfg, true, None).await
    }

    async fn extract_one(
        &self,
        snippets: &[Snippet],
        index: usize,
        control: ControlKind,
        mode: DerivationMode,
        affidavit: &str,
        g: &ExtractConfig,
    ) -> Result<(ControlAnnotation, Vec<CallRecord>), PipelineError> {
        let bundle = build_bottleneck_prompt_within(control, snippets, index, mode, affidavit, g.token_budget)?;
        let stage = format!("g:{}:{}", control.slug(), index);
        let mut calls = Vec::new();
        let mut request = GenerationRequest::new(&g.model_id, bundle.system.clone(), bundle.user.clone());
        request.max_tokens = g.max_tokens;
        let first = self.call(&request, &stage, false, &mut calls).await?;
        let parsed = match parse_control_verdict(&first[0], control) {
            Ok(value) => Ok((value, rationale_of(&first[0]))),
            Err(_) => {
                let retry_bundle = with_format_reminder(&bundle);
                let mut retry = GenerationRequest::new(&g.model_id, retry_bundle.system, retry_bundle.user);
                retry.max_tokens = g.max_tokens;
                let second = self.call(&retry, &stage, true, &mut calls).await?;
                parse_control_verdict(&second[0], control)
                    .map(|value| (value, rationale_of(&second[0])))
                    .map_err(|e| e.to_string())
            }
        };
        let (control_value, rationale, unparsed) = match parsed {
            Ok((value, rationale)) => (value, rationale, false),
            Err(reason) => {
                warn!(stage, %reason, "cue left inconclusive");
                (
                    ControlValue {
                        kind: control,
                        label: unparsed_label(control),
                        verdict: Verdict::Inconclusive,
                    },
                    String::new(),
                    true,
                )
            }
        };
        Ok((
            ControlAnnotation {
                snippet_index: index,
                contestant: snippets[index].contestant,
                control: control_value,
                rationale,
                mode,
                unparsed,
            },
            calls,
        ))
    }

    /// Annotates every snippet with every requested cue. Results are snippet-major, then in
    /// canonical control order. Sequential derivation issues each control's calls in snippet
    /// order; independent derivation issues all calls at once.
    pub async fn extract_controls(
        &self,
        session: &Session,
        controls: &BTreeSet<ControlKind>,
        mode: DerivationMode,
        g: &ExtractConfig,
    ) -> Result<Extraction, PipelineError> {
        if controls.is_empty() {
            return Err(PipelineError::Precondition("no controls requested".into()));
        }
        let snippets = segment_snippets(session)?;
        let snippets = &snippets;
        let mut results: BTreeMap<(usize, ControlKind), (ControlAnnotation, Vec<CallRecord>)> = BTreeMap::new();
        match mode {
            DerivationMode::Sequential => {
                let per_control = controls.iter().map(|&control| async move {
                    let mut out = Vec::new();
                    for index in 0..snippets.len() {
                        out.push(
                            self.extract_one(snippets, index, control, mode, &session.affidavit, g)
                                .await?,
                        );
                    }
                    Ok::<_, PipelineError>(out)
                });
                for out in try_join_all(per_control).await? {
                    for (a, calls) in out {
                        results.insert((a.snippet_index, a.control.kind), (a, calls));
                    }
                }
            }
            DerivationMode::Independent => {
                let jobs = (0..snippets.len()).flat_map(|index| {
                    controls.iter().map(move |&control| {
                        self.extract_one(snippets, index, control, mode, &session.affidavit, g)
                    })
                });
                for r in join_all(jobs).await {
                    let (a, calls) = r?;
                    results.insert((a.snippet_index, a.control.kind), (a, calls));
                }
            }
        }
        let mut extraction = Extraction::default();
        for (_, (annotation, calls)) in results {
            extraction.annotations.push(annotation);
            extraction.calls.extend(calls);
        }
        Ok(extraction)
    }

    async fn discriminate_sample(
        &self,
        session: &Session,
        annotations: &[ControlAnnotation],
        cfg: &VariantConfig,
        sample: Option<SampleSpec>,
    ) -> Result<Prediction, PipelineError> {
        let snippets = segment_snippets(session)?;
        let covered: BTreeSet<usize> = annotations.iter().map(|a| a.snippet_index).collect();
        if annotations.is_empty() || covered.len() != snippets.len() || covered.iter().any(|i| *i >= snippets.len()) {
            return Err(PipelineError::Precondition(format!(
                "annotations cover {} of {} snippets",
                covered.len(),
                snippets.len()
            )));
        }
        let mut ordered: Vec<&ControlAnnotation> = annotations.iter().collect();
        ordered.sort_by_key(|a| (a.snippet_index, a.control.kind));
        let annotated: Vec<AnnotatedSnippet<'_>> = snippets
            .iter()
            .enumerate()
            .map(|(index, snippet)| AnnotatedSnippet {
                index,
                snippet,
                cues: ordered
                    .iter()
                    .filter(|a| a.snippet_index == index)
                    .map(|a| (a.control, a.rationale.as_str()))
                    .collect(),
            })
            .collect();
        let demos = self.demos_for(cfg.shots)?;
        let bundle = build_discriminator_prompt(session, &annotated, demos)?;
        let mut calls = Vec::new();
        let outcome = self.ask_ranked(&bundle, cfg, "f", sample, &mut calls).await?;
        let provenance = Self::provenance(cfg, calls);
        let mut prediction = match outcome {
            Ok(answer) => Prediction::ranked(&session.id, cfg.variant.clone(), answer, provenance),
            Err(reason) => Prediction::invalid(&session.id, cfg.variant.clone(), reason, provenance),
        };
        prediction.annotations = annotations.to_vec();
        Ok(prediction)
    }

    /// Final discriminator call over annotated snippets.
    pub async fn discriminate(
        &self,
        session: &Session,
        annotations: &[ControlAnnotation],
        cfg: &VariantConfig,
    ) -> Result<Prediction, PipelineError> {
        self.discriminate_sample(session, annotations, cfg, None).await
    }

    /// `f(g(S))`: n·c cue calls followed by one discriminator call (plus logged re-queries).
    pub async fn run_bottleneck(&self, session: &Session, cfg: &VariantConfig) -> Result<Prediction, PipelineError> {
        if !matches!(cfg.variant, Variant::Bottleneck | Variant::BottleneckAblated { .. }) {
            return Err(PipelineError::Precondition(format!(
                "run_bottleneck given {}",
                cfg.variant.id()
            )));
        }
        let extraction = self
            .extract_controls(session, &cfg.variant.controls(), cfg.mode, &ExtractConfig::from_variant(cfg))
            .await?;
        let mut prediction = self.discriminate(session, &extraction.annotations, cfg).await?;
        let mut calls = extraction.calls;
        calls.append(&mut prediction.provenance.calls);
        prediction.provenance.calls = calls;
        Ok(prediction)
    }

    /// Self-consistency over the inner variant. Cue extraction (when present) runs once at
    /// temperature 0; only the final ranking call is sampled.
    pub async fn run_self_consistency(&self, session: &Session, cfg: &VariantConfig) -> Result<Prediction, PipelineError> {
        let Variant::SelfConsistency { k, .. } = &cfg.variant else {
            return Err(PipelineError::Precondition(format!(
                "run_self_consistency given {}",
                cfg.variant.id()
            )));
        };
        let k = *k;
        let inner = cfg.inner();
        let mut prediction = match inner.variant {
            Variant::Base | Variant::CoT => {
                let cot = inner.variant == Variant::CoT;
                self_consistency(k, cfg.sc_temperature, |spec| {
                    let inner = &inner;
                    async move { self.run_task(session, inner, cot, Some(spec)).await }
                })
                .await?
            }
            Variant::Bottleneck | Variant::BottleneckAblated { .. } => {
                let extraction = self
                    .extract_controls(session, &inner.variant.controls(), inner.mode, &ExtractConfig::from_variant(&inner))
                    .await?;
                let annotations = &extraction.annotations;
                let mut p = self_consistency(k, cfg.sc_temperature, |spec| {
                    let inner = &inner;
                    async move { self.discriminate_sample(session, annotations, inner, Some(spec)).await }
                })
                .await?;
                let mut calls = extraction.calls.clone();
                calls.append(&mut p.provenance.calls);
                p.provenance.calls = calls;
                p
            }
            Variant::SelfConsistency { .. } => {
                return Err(PipelineError::Precondition("self-consistency cannot be nested".into()))
            }
        };
        prediction.variant = cfg.variant.clone();
        Ok(prediction)
    }

    pub async fn run_variant(&self, session: &Session, cfg: &VariantConfig) -> Result<Prediction, PipelineError> {
        cfg.validate()?;
        match cfg.variant {
            Variant::Base => self.run_base(session, cfg).await,
            Variant::CoT => self.run_cot(session, cfg).await,
            Variant::Bottleneck | Variant::BottleneckAblated { .. } => self.run_bottleneck(session, cfg).await,
            Variant::SelfConsistency { .. } => self.run_self_consistency(session, cfg).await,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::{format_control_response, TemplateId};
    use crate::provider::MockProvider;
    use ContestantLabel::*;

    fn sample(top: [ContestantLabel; 3], explanation: &str) -> Prediction {
        Prediction {
            session_id: "s".into(),
            variant: Variant::CoT,
            ranking: Some(top),
            top1: Some(top[0]),
            explanation: explanation.into(),
            annotations: vec![],
            invalid_output: None,
            provenance: Provenance {
                model_id: "m".into(),
                g_model_id: None,
                template_version: TEMPLATE_VERSION.into(),
                shots: 0,
                calls: vec![],
            },
        }
    }

    #[test]
    fn majority_and_tie_break() {
        let v = majority_vote(&[
            sample([NumberTwo, NumberOne, NumberThree], "a"),
            sample([NumberTwo, NumberThree, NumberOne], "b"),
            sample([NumberThree, NumberOne, NumberTwo], "c"),
        ])
        .unwrap();
        assert_eq!(v.0[0], NumberTwo);
        assert_eq!(v.1, "a");
        let tie = majority_vote(&[
            sample([NumberOne, NumberTwo, NumberThree], "x"),
            sample([NumberTwo, NumberOne, NumberThree], "y"),
            sample([NumberThree, NumberOne, NumberTwo], "z"),
        ])
        .unwrap();
        assert_eq!(tie.0[0], NumberOne);
        assert_eq!(tie.1, "x");
    }

    #[test]
    fn borda_orders_the_tail() {
        // Winner Three; One collects 2+1+1 = 4 points, Two collects 1+0+0 = 1.
        let v = majority_vote(&[
            sample([NumberThree, NumberOne, NumberTwo], ""),
            sample([NumberThree, NumberOne, NumberTwo], ""),
            sample([NumberOne, NumberTwo, NumberThree], ""),
        ])
        .unwrap();
        assert_eq!(v.0, [NumberThree, NumberOne, NumberTwo]);
    }

    #[test]
    fn invalid_samples_are_ignored() {
        let mut bad = sample([NumberOne, NumberTwo, NumberThree], "bad");
        bad.ranking = None;
        bad.top1 = None;
        assert!(majority_vote(&[bad.clone()]).is_none());
        let v = majority_vote(&[bad, sample([NumberThree, NumberTwo, NumberOne], "ok")]).unwrap();
        assert_eq!(v.0[0], NumberThree);
    }

    #[test]
    fn variant_ids_and_canonical_ablation() {
        assert_eq!(Variant::bottleneck_with(ControlKind::all()).unwrap(), Variant::Bottleneck);
        assert!(Variant::bottleneck_with(BTreeSet::new()).is_err());
        assert_eq!(Variant::without(ControlKind::HalfTruths).id(), "bottleneck-wo-half-truths");
        let only: BTreeSet<_> = [ControlKind::Entailment].into_iter().collect();
        assert_eq!(Variant::BottleneckAblated { controls: only }.id(), "bottleneck-only-entailment");
        let sc = Variant::SelfConsistency { inner: Box::new(Variant::CoT), k: 5 };
        assert_eq!(sc.id(), "sc5-cot");
        let mut cfg = VariantConfig::new(Variant::Bottleneck, "gpt-4");
        cfg.mode = DerivationMode::Independent;
        assert_eq!(cfg.cell_id(), "bottleneck-independent__gpt-4");
    }

    #[test]
    fn config_validation() {
        let mut cfg = VariantConfig::new(Variant::Base, "m");
        cfg.shots = 1;
        assert!(cfg.validate().is_err());
        let cfg = VariantConfig::new(Variant::BottleneckAblated { controls: ControlKind::all() }, "m");
        assert!(cfg.validate().is_err());
        let mut cfg = VariantConfig::new(Variant::SelfConsistency { inner: Box::new(Variant::Base), k: 3 }, "m");
        cfg.sc_temperature = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn variant_serde_round_trip() {
        let v = Variant::SelfConsistency {
            inner: Box::new(Variant::without(ControlKind::Ambiguity)),
            k: 5,
        };
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Variant>(&json).unwrap(), v);
        let full = r#"{"kind":"bottleneck_ablated","controls":["entailment","ambiguity","overconfidence","half_truths"]}"#;
        assert_eq!(serde_json::from_str::<Variant>(full).unwrap(), Variant::Bottleneck);
        assert!(serde_json::from_str::<Variant>(r#"{"kind":"bottleneck_ablated","controls":[]}"#).is_err());
    }

    fn session() -> Session {
        use crate::corpus::{Speaker, Utterance};
        let lines = [
            (Speaker::Judge, "Number one, what do you paint?"),
            (Speaker::Contestant, "Houses."),
            (Speaker::Judge, "Number two, what do you paint?"),
            (Speaker::Contestant, "Barns."),
        ];
        Session {
            id: "p1".into(),
            cc_name: "Participant_3".into(),
            affidavit: "I paint barns.".into(),
            utterances: lines
                .iter()
                .enumerate()
                .map(|(index, (speaker, text))| Utterance { index, speaker: *speaker, addressed: None, text: text.to_string() })
                .collect(),
            ground_truth: NumberTwo,
            judge_votes: vec![],
            judge_ids: vec![],
        }
    }

    const RANKED: &str = "Barns match.\n1. Number Two 2. Number One 3. Number Three\n### Number Two";

    #[tokio::test]
    async fn base_parses_scripted_ranking() {
        let mock = MockProvider::new().on("Conversations:", RANKED);
        let pipeline = Pipeline::new(Arc::new(mock.clone()));
        let p = pipeline.run_base(&session(), &VariantConfig::new(Variant::Base, "m")).await.unwrap();
        assert_eq!(p.ranking, Some([NumberTwo, NumberOne, NumberThree]));
        assert_eq!(p.top1, Some(NumberTwo));
        assert!(p.annotations.is_empty());
        assert_eq!(mock.calls(), 1);
    }

    #[tokio::test]
    async fn garbage_twice_is_invalid_output() {
        let mock = MockProvider::new().on("Conversations:", "I cannot decide.");
        let pipeline = Pipeline::new(Arc::new(mock.clone()));
        let p = pipeline.run_base(&session(), &VariantConfig::new(Variant::Base, "m")).await.unwrap();
        assert!(p.invalid_output.is_some());
        assert_eq!(p.top1, None);
        assert_eq!(mock.calls(), 2);
        assert_eq!(p.provenance.requeries(), 1);
    }

    #[tokio::test]
    async fn requery_recovers() {
        let mock = MockProvider::new()
            .on("could not be read", RANKED)
            .on("Conversations:", "hmm");
        let pipeline = Pipeline::new(Arc::new(mock.clone()));
        let p = pipeline.run_cot(&session(), &VariantConfig::new(Variant::CoT, "m")).await.unwrap();
        assert_eq!(p.top1, Some(NumberTwo));
        assert!(mock.requests()[0].user_prompt.ends_with("Let's think step by step."));
    }

    #[tokio::test]
    async fn wrong_variant_rejected() {
        let pipeline = Pipeline::new(Arc::new(MockProvider::new()));
        assert!(pipeline.run_base(&session(), &VariantConfig::new(Variant::CoT, "m")).await.is_err());
    }

    fn cue_mock() -> MockProvider {
        MockProvider::new()
            .with_responder(|r| {
                let q = crate::prompting::inspect_cue_prompt(&r.user_prompt)?;
                let v = ControlValue::new(q.control, q.control.labels()[0], Verdict::LikelyTruePerson).unwrap();
                Some(vec![format_control_response(&v, "dodges")])
            })
            .on("Annotated conversation:", RANKED)
    }

    #[tokio::test]
    async fn bottleneck_call_count_and_order() {
        let mock = cue_mock();
        let pipeline = Pipeline::new(Arc::new(mock.clone()));
        let p = pipeline.run_bottleneck(&session(), &VariantConfig::new(Variant::Bottleneck, "m")).await.unwrap();
        assert_eq!(mock.calls(), 2 * 4 + 1);
        assert_eq!(p.provenance.calls.len(), 9);
        assert_eq!(p.annotations.len(), 8);
        let order: Vec<_> = p.annotations.iter().map(|a| (a.snippet_index, a.control.kind)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        assert_eq!(p.top1, Some(NumberTwo));
        let requests = mock.requests();
        let f_prompt = &requests.last().unwrap().user_prompt;
        assert!(f_prompt.contains("Rationale: dodges"));
    }

    #[tokio::test]
    async fn unparseable_cue_is_flagged_inconclusive() {
        let mock = MockProvider::new()
            .on("Respond in exactly this form", "no idea")
            .on("Annotated conversation:", RANKED);
        let pipeline = Pipeline::new(Arc::new(mock.clone()));
        let controls: BTreeSet<_> = [ControlKind::Entailment].into_iter().collect();
        let g = ExtractConfig { model_id: "m".into(), max_tokens: 1024, token_budget: None };
        let e = pipeline.extract_controls(&session(), &controls, DerivationMode::Sequential, &g).await.unwrap();
        assert_eq!(e.annotations.len(), 2);
        assert!(e.annotations.iter().all(|a| a.unparsed && a.control.verdict == Verdict::Inconclusive));
        assert_eq!(mock.calls(), 4);
    }

    #[tokio::test]
    async fn discriminator_requires_full_coverage() {
        let pipeline = Pipeline::new(Arc::new(MockProvider::new()));
        let cfg = VariantConfig::new(Variant::Bottleneck, "m");
        assert!(matches!(
            pipeline.discriminate(&session(), &[], &cfg).await,
            Err(PipelineError::Precondition(_))
        ));
    }

    #[tokio::test]
    async fn sc_k1_equals_inner_run() {
        let mock = MockProvider::new().on("Conversations:", RANKED);
        let pipeline = Pipeline::new(Arc::new(mock));
        let inner = pipeline.run_cot(&session(), &VariantConfig::new(Variant::CoT, "m")).await.unwrap();
        let sc_cfg = VariantConfig::new(Variant::SelfConsistency { inner: Box::new(Variant::CoT), k: 1 }, "m");
        let sc = pipeline.run_variant(&session(), &sc_cfg).await.unwrap();
        assert_eq!(sc.ranking, inner.ranking);
        assert_eq!(sc.explanation, inner.explanation);
        assert_eq!(sc.provenance, inner.provenance);
    }

    #[tokio::test]
    async fn sc_samples_are_distinct_requests() {
        let mock = MockProvider::new().with_responder(|r| {
            let seed = r.seed?;
            let ranking = match seed % 3 {
                0 | 1 => "1. Number Three 2. Number Two 3. Number One",
                _ => "1. Number One 2. Number Two 3. Number Three",
            };
            Some(vec![ranking.to_string()])
        });
        let pipeline = Pipeline::new(Arc::new(mock.clone()));
        let mut cfg = VariantConfig::new(Variant::SelfConsistency { inner: Box::new(Variant::Base), k: 5 }, "m");
        cfg.seed = 100;
        let p = pipeline.run_variant(&session(), &cfg).await.unwrap();
        assert_eq!(mock.calls(), 5);
        let requests = mock.requests();
        assert!(requests.iter().all(|r| r.temperature == 0.7));
        let digests: BTreeSet<_> = requests.iter().map(|r| r.cache_key()).collect();
        assert_eq!(digests.len(), 5);
        // seeds 100..105: 100%3=1,101%3=2,102%3=0,103%3=1,104%3=2 -> Three x3, One x2
        assert_eq!(p.top1, Some(NumberThree));
        assert_eq!(p.provenance.calls.len(), 5);
        assert!(matches!(p.variant, Variant::SelfConsistency { .. }));
    }

    #[test]
    fn template_id_of_cot_bundle() {
        let b = append_cot(build_task_prompt(&session(), 0, &[]).unwrap()).unwrap();
        assert_eq!(b.template_id, TemplateId::CoT);
    }
}
