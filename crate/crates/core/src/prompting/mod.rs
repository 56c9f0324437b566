//! Prompt assembly for the task, chain-of-thought, cue-extraction and discriminator stages,
//! plus parsers that turn completions back into typed values.
//!
//! Templates live in `templates/` as text with `{{name}}` placeholders and are compiled in.
//! Any change to their wording must bump [`TEMPLATE_VERSION`], which is recorded in every
//! prediction's provenance.

mod parse;
mod template;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ContestantLabel, Session, Snippet, Speaker};

pub use parse::{
    format_control_response, interpret_ranked_answer, parse_control_verdict, parse_prediction,
    parse_ranking, ParseError, RankedAnswer,
};
pub use template::render;

pub const TEMPLATE_VERSION: &str = "tc-prompts-v1";

pub const COT_TRIGGER: &str = "Let's think step by step.";

pub const FORMAT_REMINDER: &str = "Your previous answer could not be read. Give your rationale, then rank the contestants as \"1. Number X 2. Number Y 3. Number Z\", then finish with ### followed by the single option from {Number One, Number Two, Number Three}.";

pub const CONTROL_FORMAT_REMINDER: &str = "Your previous answer could not be read. Answer with the three lines Label:, Verdict: and Rationale: exactly as requested.";

pub const ELISION_MARKER: &str = "[earlier snippets elided]";

const SYSTEM: &str = include_str!("../../templates/system.txt");
const SITUATION: &str = include_str!("../../templates/situation.txt");
const TASK: &str = include_str!("../../templates/task.txt");
const RANKING: &str = include_str!("../../templates/ranking.txt");
const BOTTLENECK: &str = include_str!("../../templates/bottleneck.txt");
const DISCRIMINATOR: &str = include_str!("../../templates/discriminator.txt");
const CONTROL_ENTAILMENT: &str = include_str!("../../templates/control_entailment.txt");
const CONTROL_AMBIGUITY: &str = include_str!("../../templates/control_ambiguity.txt");
const CONTROL_OVERCONFIDENCE: &str = include_str!("../../templates/control_overconfidence.txt");
const CONTROL_HALF_TRUTHS: &str = include_str!("../../templates/control_half_truths.txt");

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("demonstration `{0}` is the evaluated session")]
    DemoOverlap(String),
    #[error("{shots} shots requested but {demos} demonstrations supplied")]
    ShotMismatch { shots: usize, demos: usize },
    #[error("expected a {expected:?} prompt, got {actual:?}")]
    WrongTemplate {
        expected: TemplateId,
        actual: TemplateId,
    },
    #[error("snippet index {index} out of range for {len} snippets")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("template placeholder `{0}` left unfilled")]
    UnfilledPlaceholder(String),
    #[error("discriminator needs at least one annotated snippet")]
    NoAnnotations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TemplateId {
    Base,
    CoT,
    BottleneckControl,
    Discriminator,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub template_id: TemplateId,
    pub control: Option<ControlKind>,
    pub shots: usize,
}

/// The four cue families extracted per snippet, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    Entailment,
    Ambiguity,
    Overconfidence,
    HalfTruths,
}

impl ControlKind {
    pub const ALL: [ControlKind; 4] = [
        ControlKind::Entailment,
        ControlKind::Ambiguity,
        ControlKind::Overconfidence,
        ControlKind::HalfTruths,
    ];

    pub fn all() -> BTreeSet<ControlKind> {
        Self::ALL.into_iter().collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            ControlKind::Entailment => "Entailment",
            ControlKind::Ambiguity => "Ambiguity",
            ControlKind::Overconfidence => "Overconfidence",
            ControlKind::HalfTruths => "Half-truths",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            ControlKind::Entailment => "entailment",
            ControlKind::Ambiguity => "ambiguity",
            ControlKind::Overconfidence => "overconfidence",
            ControlKind::HalfTruths => "half-truths",
        }
    }

    pub fn labels(self) -> &'static [ControlLabel] {
        use ControlLabel::*;
        match self {
            ControlKind::Entailment => &[Entail, Contradiction, Neutral],
            ControlKind::Ambiguity => &[Ambiguous, Unambiguous],
            ControlKind::Overconfidence => &[Overconfident, Neutral],
            ControlKind::HalfTruths => &[HalfTruth, NoHalfTruth],
        }
    }

    fn instruction(self) -> &'static str {
        match self {
            ControlKind::Entailment => CONTROL_ENTAILMENT,
            ControlKind::Ambiguity => CONTROL_AMBIGUITY,
            ControlKind::Overconfidence => CONTROL_OVERCONFIDENCE,
            ControlKind::HalfTruths => CONTROL_HALF_TRUTHS,
        }
    }
}

impl fmt::Display for ControlKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlLabel {
    Entail,
    Contradiction,
    Neutral,
    Ambiguous,
    Unambiguous,
    Overconfident,
    HalfTruth,
    NoHalfTruth,
}

impl ControlLabel {
    pub fn keyword(self) -> &'static str {
        match self {
            ControlLabel::Entail => "entail",
            ControlLabel::Contradiction => "contradiction",
            ControlLabel::Neutral => "neutral",
            ControlLabel::Ambiguous => "ambiguous",
            ControlLabel::Unambiguous => "unambiguous",
            ControlLabel::Overconfident => "overconfident",
            ControlLabel::HalfTruth => "half-truth",
            ControlLabel::NoHalfTruth => "no half-truth",
        }
    }

    /// Whether the label marks the deceptive side of its cue.
    pub fn signals_deception(self) -> bool {
        matches!(
            self,
            ControlLabel::Contradiction
                | ControlLabel::Ambiguous
                | ControlLabel::Overconfident
                | ControlLabel::HalfTruth
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    LikelyImposter,
    LikelyTruePerson,
    Inconclusive,
}

impl Verdict {
    pub fn phrase(self) -> &'static str {
        match self {
            Verdict::LikelyImposter => "likely imposter",
            Verdict::LikelyTruePerson => "likely the true person",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ControlValue {
    pub kind: ControlKind,
    pub label: ControlLabel,
    pub verdict: Verdict,
}

impl ControlValue {
    pub fn new(kind: ControlKind, label: ControlLabel, verdict: Verdict) -> Result<Self, String> {
        if !kind.labels().contains(&label) {
            return Err(format!("label {label:?} is outside the {kind} domain"));
        }
        Ok(ControlValue { kind, label, verdict })
    }

    pub fn cue_present(&self) -> bool {
        self.label.signals_deception()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivationMode {
    Independent,
    Sequential,
}

fn situation() -> &'static str {
    SITUATION.trim_end()
}

pub fn system_prompt() -> &'static str {
    SYSTEM.trim_end()
}

/// Renders the conversation as `Q:`/`A:` lines in utterance order.
pub fn render_conversation(session: &Session) -> String {
    session
        .utterances
        .iter()
        .map(|u| match u.speaker {
            Speaker::Judge => format!("Q: {}", u.text),
            Speaker::Contestant => format!("A: {}", u.text),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_input(session: &Session) -> String {
    format!(
        "Name: {}\nAffidavit: {}\nConversations:\n{}",
        session.cc_name,
        session.affidavit,
        render_conversation(session)
    )
}

fn render_demonstrations(demos: &[(Session, ContestantLabel)]) -> String {
    demos
        .iter()
        .map(|(d, label)| format!("{}\n\nAnswer: ### {}\n\n", render_input(d), label))
        .collect()
}

/// Task prompt with `shots` demonstrations (input plus gold answer) ahead of the query.
pub fn build_task_prompt(
    session: &Session,
    shots: usize,
    demos: &[(Session, ContestantLabel)],
) -> Result<PromptBundle, PromptError> {
    if shots != demos.len() {
        return Err(PromptError::ShotMismatch {
            shots,
            demos: demos.len(),
        });
    }
    if let Some((d, _)) = demos.iter().find(|(d, _)| d.id == session.id) {
        return Err(PromptError::DemoOverlap(d.id.clone()));
    }
    let demonstrations = render_demonstrations(demos);
    let user = render(
        TASK,
        &[
            ("situation", situation()),
            ("ranking_instruction", RANKING.trim_end()),
            ("demonstrations", &demonstrations),
            ("input", &render_input(session)),
        ],
    )?;
    Ok(PromptBundle {
        system: system_prompt().to_string(),
        user: user.trim_end().to_string(),
        template_id: TemplateId::Base,
        control: None,
        shots,
    })
}

/// Suffixes the zero-shot reasoning trigger onto a base task prompt.
pub fn append_cot(bundle: PromptBundle) -> Result<PromptBundle, PromptError> {
    if bundle.template_id != TemplateId::Base {
        return Err(PromptError::WrongTemplate {
            expected: TemplateId::Base,
            actual: bundle.template_id,
        });
    }
    Ok(PromptBundle {
        user: format!("{} {}", bundle.user, COT_TRIGGER),
        template_id: TemplateId::CoT,
        ..bundle
    })
}

/// One snippet as it appears inside cue and discriminator prompts. Numbering is 1-based and
/// follows the snippet's position in the session.
pub fn render_snippet(index: usize, snippet: &Snippet) -> String {
    let mut out = format!("Snippet {} (addressed to {}):", index + 1, snippet.contestant);
    for pair in &snippet.qa_pairs {
        out.push_str("\nQ: ");
        out.push_str(&pair.question.text);
        for a in &pair.answers {
            out.push_str("\nA: ");
            out.push_str(&a.text);
        }
    }
    out
}

/// Rough token estimate (about four characters per token).
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

pub fn build_bottleneck_prompt(
    control: ControlKind,
    snippets: &[Snippet],
    target_index: usize,
    mode: DerivationMode,
    affidavit: &str,
) -> Result<PromptBundle, PromptError> {
    build_bottleneck_prompt_within(control, snippets, target_index, mode, affidavit, None)
}

/// As [`build_bottleneck_prompt`], dropping the oldest history snippets (behind an explicit
/// elision marker) until the estimated prompt size fits `token_budget`. The target snippet is
/// always kept.
pub fn build_bottleneck_prompt_within(
    control: ControlKind,
    snippets: &[Snippet],
    target_index: usize,
    mode: DerivationMode,
    affidavit: &str,
    token_budget: Option<usize>,
) -> Result<PromptBundle, PromptError> {
    if target_index >= snippets.len() {
        return Err(PromptError::IndexOutOfRange {
            index: target_index,
            len: snippets.len(),
        });
    }
    let first = match mode {
        DerivationMode::Independent => target_index,
        DerivationMode::Sequential => 0,
    };
    let mut start = first;
    loop {
        let bundle = render_bottleneck(control, snippets, start, first, target_index, affidavit)?;
        let fits = token_budget
            .is_none_or(|b| estimate_tokens(&bundle.system) + estimate_tokens(&bundle.user) <= b);
        if fits || start == target_index {
            return Ok(bundle);
        }
        start += 1;
    }
}

fn render_bottleneck(
    control: ControlKind,
    snippets: &[Snippet],
    start: usize,
    first: usize,
    target_index: usize,
    affidavit: &str,
) -> Result<PromptBundle, PromptError> {
    let mut blocks = Vec::new();
    if start > first {
        blocks.push(ELISION_MARKER.to_string());
    }
    for (i, s) in snippets.iter().enumerate().take(target_index + 1).skip(start) {
        blocks.push(render_snippet(i, s));
    }
    let options = control
        .labels()
        .iter()
        .map(|l| l.keyword())
        .collect::<Vec<_>>()
        .join(", ");
    let target = &snippets[target_index];
    let user = render(
        BOTTLENECK,
        &[
            ("situation", situation()),
            ("control_instruction", control.instruction().trim_end()),
            ("affidavit", affidavit),
            ("snippets", &blocks.join("\n\n")),
            ("target_number", &(target_index + 1).to_string()),
            ("target_contestant", target.contestant.as_str()),
            ("control_name", control.name()),
            ("label_options", &options),
        ],
    )?;
    Ok(PromptBundle {
        system: system_prompt().to_string(),
        user: user.trim_end().to_string(),
        template_id: TemplateId::BottleneckControl,
        control: Some(control),
        shots: 0,
    })
}

/// A snippet together with the cue annotations rendered for the discriminator.
#[derive(Debug, Clone)]
pub struct AnnotatedSnippet<'a> {
    pub index: usize,
    pub snippet: &'a Snippet,
    pub cues: Vec<(ControlValue, &'a str)>,
}

/// Discriminator prompt over annotated snippets. Demonstrations, when given, are rendered as
/// plain conversations with their gold answer ahead of the query.
pub fn build_discriminator_prompt(
    session: &Session,
    annotated: &[AnnotatedSnippet<'_>],
    demos: &[(Session, ContestantLabel)],
) -> Result<PromptBundle, PromptError> {
    if annotated.is_empty() {
        return Err(PromptError::NoAnnotations);
    }
    if let Some((d, _)) = demos.iter().find(|(d, _)| d.id == session.id) {
        return Err(PromptError::DemoOverlap(d.id.clone()));
    }
    let blocks: Vec<String> = annotated
        .iter()
        .map(|a| {
            let mut block = render_snippet(a.index, a.snippet);
            block.push_str("\nCues:");
            for (value, rationale) in &a.cues {
                block.push_str(&format!(
                    "\n- {}: {}; {}.",
                    value.kind.name(),
                    value.label.keyword(),
                    value.verdict.phrase()
                ));
                if !rationale.is_empty() {
                    block.push_str(" Rationale: ");
                    block.push_str(rationale);
                }
            }
            block
        })
        .collect();
    let user = render(
        DISCRIMINATOR,
        &[
            ("situation", situation()),
            ("demonstrations", &render_demonstrations(demos)),
            ("name", &session.cc_name),
            ("affidavit", &session.affidavit),
            ("annotated_snippets", &blocks.join("\n\n")),
            ("ranking_instruction", RANKING.trim_end()),
        ],
    )?;
    Ok(PromptBundle {
        system: system_prompt().to_string(),
        user: user.trim_end().to_string(),
        template_id: TemplateId::Discriminator,
        control: None,
        shots: demos.len(),
    })
}

/// Adds the re-query reminder to a bundle whose completion failed to parse.
/// What a cue-extraction prompt asks about, recovered from its text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CueQuery {
    pub control: ControlKind,
    /// 0-based snippet position.
    pub snippet_index: usize,
    pub contestant: ContestantLabel,
    /// The target snippet's rendered `Q:`/`A:` lines.
    pub snippet_text: String,
}

/// Inverse of the cue prompt renderer, for scripted backends. `None` for any other prompt.
pub fn inspect_cue_prompt(user: &str) -> Option<CueQuery> {
    let start = user.rfind("\nAssess snippet ")? + "\nAssess snippet ".len();
    let line = user[start..].lines().next()?;
    let (number, rest) = line.split_once(", addressed to ")?;
    let (contestant, control) = rest.split_once(", for ")?;
    let number: usize = number.parse().ok()?;
    let control = ControlKind::ALL
        .into_iter()
        .find(|k| control.strip_suffix('.') == Some(k.name()))?;
    let contestant: ContestantLabel = contestant.parse().ok()?;
    let header = format!("Snippet {number} (addressed to {contestant}):\n");
    let body_start = user.find(&header)? + header.len();
    let body = &user[body_start..];
    let end = body.find("\n\n").unwrap_or(body.len());
    Some(CueQuery {
        control,
        snippet_index: number.checked_sub(1)?,
        contestant,
        snippet_text: body[..end].to_string(),
    })
}

pub fn with_format_reminder(bundle: &PromptBundle) -> PromptBundle {
    let reminder = match bundle.template_id {
        TemplateId::BottleneckControl => CONTROL_FORMAT_REMINDER,
        _ => FORMAT_REMINDER,
    };
    PromptBundle {
        user: format!("{}\n\n{}", bundle.user, reminder),
        ..bundle.clone()
    }
}
