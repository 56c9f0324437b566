//! Experiment orchestration: configuration, the variant × model matrix, resumable persistence
//! and report tables.
//!
//! A run directory holds `config.snapshot`, `predictions/<cell>.jsonl`, `reports/<cell>.json`
//! and `table.md`. Predictions are appended as sessions finish and rewritten in corpus order
//! when a cell completes, so interrupted and uninterrupted runs end byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::info;

use crate::corpus::{
    anonymize, corpus_stats, parse_corpus, parse_session_record, CorpusError, CorpusStats,
    LabelPermutation, Session,
};
use crate::evaluation::{render_table, truths_of, EvalReport};
use crate::pipeline::{Pipeline, PipelineError, Prediction, VariantConfig};
use crate::prompting::TEMPLATE_VERSION;
use crate::provider::{
    ChatCompletionsBackend, HeuristicProvider, HeuristicRules, MockProvider, Provider, ProviderClient, ProviderConfig, ProviderError,
    ResponseCache,
};

pub const SNAPSHOT_FILE: &str = "config.snapshot";
pub const TABLE_FILE: &str = "table.md";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing reports for cells: {}", .0.join(", "))]
    MissingReports(Vec<String>),
    #[error("{0}")]
    Persisted(String),
}

impl RunError {
    /// CLI exit status: 1 for configuration and input problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Corpus(_) => 1,
            RunError::Pipeline(PipelineError::Provider(
                ProviderError::MissingCredentials { .. } | ProviderError::InvalidRequest(_),
            )) => 1,
            _ => 2,
        }
    }
}

impl From<ProviderError> for RunError {
    fn from(e: ProviderError) -> Self {
        RunError::Pipeline(PipelineError::Provider(e))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// Scripted responses from a JSON file; no network.
    Mock,
    /// Keyword rules; no network.
    Heuristic,
    /// OpenAI-compatible chat completions endpoint.
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    /// Response cache root; defaults to `<output_dir>/cache`.
    #[serde(default, skip_serializing)]
    pub cache_dir: Option<PathBuf>,
    /// Marker phrases for the heuristic backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<HeuristicRules>,
    #[serde(flatten)]
    pub settings: ProviderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymizationConfig {
    pub seed: u64,
    /// Also relabel contestants with a per-session permutation drawn from `seed`.
    #[serde(default)]
    pub permute_labels: bool,
    /// Further proper names to replace besides each session's CC name.
    #[serde(default)]
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub output_dir: PathBuf,
    /// Self-consistency sample seeds; copied into every cell.
    #[serde(default)]
    pub seed: u64,
    /// Demonstration sessions, in order; never evaluated.
    #[serde(default)]
    pub demo_ids: Vec<String>,
    /// Default token budget for sequential cue prompts.
    #[serde(default)]
    pub token_budget: Option<usize>,
    #[serde(default)]
    pub anonymization: Option<AnonymizationConfig>,
    pub provider: ProviderSection,
    pub cells: Vec<VariantConfig>,
}

impl ExperimentConfig {
    /// Reads a TOML config. Relative paths resolve against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.output_dir);
        if let Some(s) = self.provider.script.as_mut() {
            fix(s);
        }
        if let Some(c) = self.provider.cache_dir.as_mut() {
            fix(c);
        }
    }

    /// Cells with run-wide defaults applied.
    pub fn resolved_cells(&self) -> Vec<VariantConfig> {
        self.cells
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.seed = self.seed;
                if c.token_budget.is_none() {
                    c.token_budget = self.token_budget;
                }
                c
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.cells.is_empty() {
            return Err(RunError::Config("no cells configured".into()));
        }
        let mut ids = BTreeSet::new();
        for cell in self.resolved_cells() {
            cell.validate().map_err(|e| RunError::Config(format!("cell {}: {e}", cell.cell_id())))?;
            if cell.shots > self.demo_ids.len() {
                return Err(RunError::Config(format!(
                    "cell {} wants {} shots but {} demo ids are configured",
                    cell.cell_id(),
                    cell.shots,
                    self.demo_ids.len()
                )));
            }
            if !ids.insert(cell.cell_id()) {
                return Err(RunError::Config(format!("duplicate cell {}", cell.cell_id())));
            }
        }
        let unique: BTreeSet<_> = self.demo_ids.iter().collect();
        if unique.len() != self.demo_ids.len() {
            return Err(RunError::Config("demo ids repeat".into()));
        }
        match self.provider.kind {
            ProviderKind::Mock if self.provider.script.is_none() => {
                return Err(RunError::Config("mock provider needs `script`".into()))
            }
            _ => {}
        }
        self.provider.settings.validate().map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.provider
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("cache"))
    }

    /// The backend named by the provider section. Credentials are resolved here, so a missing
    /// key fails before any session runs.
    pub fn build_backend(&self) -> Result<Arc<dyn Provider>, RunError> {
        Ok(match self.provider.kind {
            ProviderKind::Mock => {
                let script = self.provider.script.as_ref().expect("validated");
                Arc::new(MockProvider::from_script_file(script).map_err(|e| RunError::Config(format!("{}: {e}", script.display())))?)
            }
            ProviderKind::Heuristic => Arc::new(HeuristicProvider::new(self.provider.rules.clone().unwrap_or_default())),
            ProviderKind::Chat => Arc::new(ChatCompletionsBackend::from_config(&self.provider.settings)?),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CellEntry {
    id: String,
    config: VariantConfig,
}

/// Run metadata written to `config.snapshot`. Paths of the output and cache directories are
/// left out so equivalent runs in different directories snapshot identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Snapshot {
    template_version: String,
    corpus_file: String,
    corpus_sha256: String,
    seed: u64,
    demo_ids: Vec<String>,
    anonymization: Option<AnonymizationConfig>,
    provider_kind: ProviderKind,
    provider: ProviderConfig,
    cells: Vec<CellEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell_id: String,
    /// Sessions run in this invocation.
    pub executed: usize,
    /// Sessions recovered from an earlier invocation.
    pub resumed: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub cells: Vec<CellSummary>,
    pub table: PathBuf,
}

/// Sessions after optional anonymization. Label permutations are drawn in corpus order.
pub fn prepare_sessions(sessions: Vec<Session>, anon: Option<&AnonymizationConfig>) -> Vec<Session> {
    let Some(anon) = anon else { return sessions };
    let mut rng = ChaCha8Rng::seed_from_u64(anon.seed);
    sessions
        .iter()
        .map(|s| {
            let perm = if anon.permute_labels {
                LabelPermutation::random(&mut rng)
            } else {
                LabelPermutation::IDENTITY
            };
            anonymize(s, &perm, anon.seed, &anon.names)
        })
        .collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Predictions persisted by an earlier invocation. A torn final line (no newline) is dropped;
/// a damaged complete line is an error.
pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, RunError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let complete = match text.rfind('\n') {
        Some(end) => &text[..end],
        None => "",
    };
    complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| RunError::Persisted(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn prediction_lines(preds: &[&Prediction]) -> String {
    preds
        .iter()
        .map(|p| serde_json::to_string(p).expect("predictions serialize") + "\n")
        .collect()
}

/// Runs every cell with the backend named in the config.
pub async fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary, RunError> {
    config.validate()?;
    let backend = config.build_backend()?;
    run_experiment_with(config, backend).await
}

/// Runs every cell against `backend`, wrapped in the configured cache, rate limit and retries.
pub async fn run_experiment_with(config: &ExperimentConfig, backend: Arc<dyn Provider>) -> Result<RunSummary, RunError> {
    config.validate()?;
    let corpus_bytes = fs::read(&config.corpus).map_err(|source| CorpusError::Io {
        path: config.corpus.display().to_string(),
        source,
    })?;
    let sessions = prepare_sessions(parse_corpus(&config.corpus)?, config.anonymization.as_ref());
    let by_id: BTreeMap<&str, &Session> = sessions.iter().map(|s| (s.id.as_str(), s)).collect();
    let demos = config
        .demo_ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|s| ((*s).clone(), s.ground_truth))
                .ok_or_else(|| RunError::Config(format!("demo id `{id}` is not in the corpus")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let demo_ids: BTreeSet<&str> = config.demo_ids.iter().map(String::as_str).collect();
    let eval_sessions: Vec<&Session> = sessions.iter().filter(|s| !demo_ids.contains(s.id.as_str())).collect();
    let truths = truths_of(&sessions);

    let run_dir = config.output_dir.clone();
    for sub in ["predictions", "reports"] {
        let dir = run_dir.join(sub);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    let cells = config.resolved_cells();
    let snapshot = Snapshot {
        template_version: TEMPLATE_VERSION.to_string(),
        corpus_file: config
            .corpus
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        corpus_sha256: hex::encode(Sha256::digest(&corpus_bytes)),
        seed: config.seed,
        demo_ids: config.demo_ids.clone(),
        anonymization: config.anonymization.clone(),
        provider_kind: config.provider.kind,
        provider: config.provider.settings.clone(),
        cells: cells.iter().map(|c| CellEntry { id: c.cell_id(), config: c.clone() }).collect(),
    };
    let snapshot_text = serde_json::to_string_pretty(&snapshot).expect("snapshot serializes") + "\n";
    write_atomic(&run_dir.join(SNAPSHOT_FILE), snapshot_text.as_bytes())?;

    let client = ProviderClient::new(backend, config.provider.settings.clone(), Some(ResponseCache::new(config.cache_dir())))?;
    let pipeline = Pipeline::new(Arc::new(client)).with_demos(demos);
    let workers = config.provider.settings.max_concurrent;

    let mut summaries = Vec::new();
    for cell in &cells {
        let cell_id = cell.cell_id();
        let pred_path = run_dir.join("predictions").join(format!("{cell_id}.jsonl"));
        let mut done: BTreeMap<String, Prediction> = read_predictions(&pred_path)?
            .into_iter()
            .filter(|p| by_id.contains_key(p.session_id.as_str()))
            .map(|p| (p.session_id.clone(), p))
            .collect();
        let resumed = done.len();
        // Drop any torn tail before appending.
        let kept: Vec<&Prediction> = eval_sessions.iter().filter_map(|s| done.get(&s.id)).collect();
        write_atomic(&pred_path, prediction_lines(&kept).as_bytes())?;

        let pending: Vec<&Session> = eval_sessions.iter().copied().filter(|s| !done.contains_key(&s.id)).collect();
        info!(cell = %cell_id, pending = pending.len(), resumed, "running cell");
        let mut writer = fs::OpenOptions::new()
            .append(true)
            .open(&pred_path)
            .map_err(io_err(&pred_path))?;
        let mut results = stream::iter(pending.iter().map(|s| pipeline.run_variant(s, cell)))
            .buffer_unordered(workers);
        let mut executed = 0;
        let mut failure = None;
        while let Some(result) = results.next().await {
            match result {
                Ok(p) => {
                    writer
                        .write_all(prediction_lines(&[&p]).as_bytes())
                        .and_then(|_| writer.flush())
                        .map_err(io_err(&pred_path))?;
                    executed += 1;
                    done.insert(p.session_id.clone(), p);
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        drop(results);
        drop(writer);
        if let Some(e) = failure {
            return Err(e.into());
        }

        let ordered: Vec<Prediction> = eval_sessions.iter().map(|s| done[&s.id].clone()).collect();
        write_atomic(&pred_path, prediction_lines(&ordered.iter().collect::<Vec<_>>()).as_bytes())?;
        let report = EvalReport::from_predictions(cell_id.clone(), &ordered, &truths)
            .map_err(|e| RunError::Persisted(e.to_string()))?;
        let report_path = run_dir.join("reports").join(format!("{cell_id}.json"));
        let report_text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        write_atomic(&report_path, report_text.as_bytes())?;
        summaries.push(CellSummary { cell_id, executed, resumed, report });
    }
    let table = emit_report(&run_dir)?;
    Ok(RunSummary { run_dir, cells: summaries, table })
}

/// Rebuilds `table.md` from the reports of every cell named in the snapshot.
pub fn emit_report(run_dir: impl AsRef<Path>) -> Result<PathBuf, RunError> {
    let run_dir = run_dir.as_ref();
    let snapshot_path = run_dir.join(SNAPSHOT_FILE);
    let text = fs::read_to_string(&snapshot_path).map_err(io_err(&snapshot_path))?;
    let snapshot: Snapshot =
        serde_json::from_str(&text).map_err(|e| RunError::Persisted(format!("{}: {e}", snapshot_path.display())))?;
    let mut reports = Vec::new();
    let mut missing = Vec::new();
    for cell in &snapshot.cells {
        let path = run_dir.join("reports").join(format!("{}.json", cell.id));
        match fs::read_to_string(&path) {
            Ok(t) => reports.push(
                serde_json::from_str::<EvalReport>(&t)
                    .map_err(|e| RunError::Persisted(format!("{}: {e}", path.display())))?,
            ),
            Err(_) => missing.push(cell.id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(RunError::MissingReports(missing));
    }
    let table_path = run_dir.join(TABLE_FILE);
    write_atomic(&table_path, render_table(&reports).as_bytes())?;
    Ok(table_path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusValidation {
    pub stats: CorpusStats,
    pub warnings: Vec<String>,
}

/// Lenient corpus check: unreadable records, duplicate ids, orphan answers and sessions
/// without judge votes become warnings. Statistics cover every record that parses.
pub fn validate_corpus(path: impl AsRef<Path>) -> Result<CorpusValidation, RunError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut warnings = Vec::new();
    let mut sessions: Vec<Session> = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let session = match parse_session_record(raw, line) {
            Ok(s) => s,
            Err(e) => {
                warnings.push(format!("line {line}: {e}"));
                continue;
            }
        };
        match session.validate() {
            Ok(()) => {}
            Err(CorpusError::OrphanAnswer { index, .. }) => warnings.push(format!(
                "line {line}: session {}: contestant answer at utterance {index} has no preceding judge question",
                session.id
            )),
            Err(e) => {
                warnings.push(format!("line {line}: {e}"));
                continue;
            }
        }
        if !ids.insert(session.id.clone()) {
            warnings.push(format!("line {line}: duplicate session id `{}`", session.id));
            continue;
        }
        if !session.has_votes() {
            warnings.push(format!("line {line}: session {} has no judge votes", session.id));
        }
        sessions.push(session);
    }
    Ok(CorpusValidation {
        stats: corpus_stats(&sessions),
        warnings,
    })
}
