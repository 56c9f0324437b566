use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use super::{ControlKind, ControlLabel, ControlValue, Verdict};
use crate::corpus::ContestantLabel;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no ### answer marker")]
    MissingMarker,
    #[error("no contestant label after the ### marker")]
    NoLabel,
    #[error("several contestant labels after the ### marker: {0:?}")]
    AmbiguousLabel(Vec<ContestantLabel>),
    #[error("no complete numbered ranking of the three contestants")]
    MissingRanking,
    #[error("ranking repeats a contestant: {0:?}")]
    RepeatedLabel(Vec<ContestantLabel>),
    #[error("answer {marker} disagrees with ranking head {ranking_head}")]
    InconsistentAnswer {
        marker: ContestantLabel,
        ranking_head: ContestantLabel,
    },
    #[error("no {0} label in the response")]
    MissingControlLabel(ControlKind),
}

static MENTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bnumber\s+(one|two|three)\b").unwrap());

static RANK_ITEM: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:^|[^0-9])([123])\s*[.):]\s*(?:\*\*\s*)?number\s+(one|two|three)\b").unwrap()
});

fn numeral(word: &str) -> ContestantLabel {
    match word.to_ascii_lowercase().as_str() {
        "one" => ContestantLabel::NumberOne,
        "two" => ContestantLabel::NumberTwo,
        _ => ContestantLabel::NumberThree,
    }
}

/// Splits at the last `###`: rationale before it, exactly one label phrase after it.
pub fn parse_prediction(completion: &str) -> Result<(String, ContestantLabel), ParseError> {
    let at = completion.rfind("###").ok_or(ParseError::MissingMarker)?;
    let rationale = completion[..at].trim().to_string();
    let mut labels: Vec<ContestantLabel> = MENTION
        .captures_iter(&completion[at + 3..])
        .map(|c| numeral(&c[1]))
        .collect();
    labels.dedup();
    let mut distinct = labels.clone();
    distinct.sort();
    distinct.dedup();
    match distinct.len() {
        0 => Err(ParseError::NoLabel),
        1 => Ok((rationale, distinct[0])),
        _ => Err(ParseError::AmbiguousLabel(labels)),
    }
}

/// Extracts the last "1. Number X 2. Number Y 3. Number Z" sequence in the text.
pub fn parse_ranking(completion: &str) -> Result<[ContestantLabel; 3], ParseError> {
    let items: Vec<(u8, ContestantLabel)> = RANK_ITEM
        .captures_iter(completion)
        .map(|c| (c[1].parse::<u8>().unwrap(), numeral(&c[2])))
        .collect();
    let triple = items
        .windows(3)
        .rev()
        .find(|w| w[0].0 == 1 && w[1].0 == 2 && w[2].0 == 3)
        .ok_or(ParseError::MissingRanking)?;
    let ranking = [triple[0].1, triple[1].1, triple[2].1];
    if ranking[0] == ranking[1] || ranking[0] == ranking[2] || ranking[1] == ranking[2] {
        return Err(ParseError::RepeatedLabel(ranking.to_vec()));
    }
    Ok(ranking)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedAnswer {
    pub ranking: [ContestantLabel; 3],
    pub explanation: String,
}

/// Reads a task or discriminator completion: the numbered ranking is required; a `###` answer,
/// when present, must agree with the ranking head. The explanation is the text before the
/// last marker (or the whole completion without one).
pub fn interpret_ranked_answer(completion: &str) -> Result<RankedAnswer, ParseError> {
    let ranking = parse_ranking(completion)?;
    let explanation = match parse_prediction(completion) {
        Ok((rationale, label)) => {
            if label != ranking[0] {
                return Err(ParseError::InconsistentAnswer {
                    marker: label,
                    ranking_head: ranking[0],
                });
            }
            rationale
        }
        Err(ParseError::MissingMarker) => completion.trim().to_string(),
        Err(e) => return Err(e),
    };
    Ok(RankedAnswer {
        ranking,
        explanation,
    })
}

struct LabelPattern {
    label: ControlLabel,
    regex: Regex,
}

fn patterns(kind: ControlKind) -> &'static [LabelPattern] {
    static TABLE: LazyLock<Vec<Vec<LabelPattern>>> = LazyLock::new(|| {
        let p = |label, re: &str| LabelPattern {
            label,
            regex: Regex::new(&format!("(?i){re}")).unwrap(),
        };
        use ControlLabel::*;
        vec![
            vec![
                p(Contradiction, r"\bcontradict(?:ion|ions|s|ed|ory)?\b"),
                p(Neutral, r"\bneutral\b"),
                p(Entail, r"\bentail(?:s|ed)?\b"),
            ],
            vec![
                p(Unambiguous, r"\bunambiguous\b|\bnot\s+ambiguous\b"),
                p(Ambiguous, r"\bambiguous\b"),
            ],
            vec![
                p(Neutral, r"\bneutral\b|\bnot\s+over-?confident\b"),
                p(Overconfident, r"\bover-?confident\b"),
            ],
            vec![
                p(
                    NoHalfTruth,
                    r"\bno\s+half[- ]truths?\b|\bnot\s+(?:a\s+)?half[- ]truths?\b|\bwithout\s+(?:any\s+)?half[- ]truths?\b",
                ),
                p(HalfTruth, r"\bhalf[- ]truths?\b"),
            ],
        ]
    });
    let i = ControlKind::ALL.iter().position(|k| *k == kind).unwrap();
    &TABLE[i]
}

/// Earliest match wins; at equal start the longer match wins ("no half-truth" over "half-truth").
fn find_label(text: &str, kind: ControlKind) -> Option<ControlLabel> {
    patterns(kind)
        .iter()
        .filter_map(|p| {
            p.regex
                .find(text)
                .map(|m| (m.start(), std::cmp::Reverse(m.len()), p.label))
        })
        .min_by_key(|(start, len, _)| (*start, *len))
        .map(|(_, _, label)| label)
}

static IMPOSTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\blikely\s+(?:an?\s+|the\s+)?impost[eo]r\b").unwrap());
static TRUE_PERSON: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\blikely\s+(?:the\s+|a\s+)?(?:true|real)\s+person\b").unwrap()
});

fn find_verdict(text: &str) -> Option<Verdict> {
    let imposter = IMPOSTER.find(text).map(|m| m.start());
    let true_person = TRUE_PERSON.find(text).map(|m| m.start());
    match (imposter, true_person) {
        (Some(a), Some(b)) if b < a => Some(Verdict::LikelyTruePerson),
        (Some(_), _) => Some(Verdict::LikelyImposter),
        (None, Some(_)) => Some(Verdict::LikelyTruePerson),
        (None, None) => None,
    }
}

/// Content of the first `Name:`-style line, tolerant of markdown emphasis.
fn field_line<'a>(text: &'a str, field: &str) -> Option<&'a str> {
    text.lines().find_map(|line| {
        let stripped = line.trim().trim_start_matches(['*', '-', '#', ' ']);
        let lower = stripped.to_ascii_lowercase();
        if lower.starts_with(field) {
            let rest = stripped[field.len()..].trim_start_matches(['*', ' ']);
            rest.strip_prefix(':')
        } else {
            None
        }
    })
}

/// Reads a cue-extraction completion. A `Label:` or `Verdict:` line is consulted first, then
/// the whole text. A missing verdict phrase yields [`Verdict::Inconclusive`]; a missing label
/// is an error.
pub fn parse_control_verdict(completion: &str, kind: ControlKind) -> Result<ControlValue, ParseError> {
    let label = field_line(completion, "label")
        .and_then(|line| find_label(line, kind))
        .or_else(|| find_label(completion, kind))
        .ok_or(ParseError::MissingControlLabel(kind))?;
    let verdict = field_line(completion, "verdict")
        .and_then(find_verdict)
        .or_else(|| find_verdict(completion))
        .unwrap_or(Verdict::Inconclusive);
    Ok(ControlValue { kind, label, verdict })
}

/// The canonical response shape requested by cue prompts.
pub fn format_control_response(value: &ControlValue, rationale: &str) -> String {
    format!(
        "Label: {}\nVerdict: {}\nRationale: {}",
        value.label.keyword(),
        value.verdict.phrase(),
        rationale
    )
}
