use std::collections::BTreeMap;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{GenerationRequest, GenerationResult, Provider, ProviderError};
use crate::corpus::{detect_address, ContestantLabel};
use crate::prompting::{format_control_response, inspect_cue_prompt, ControlKind, ControlLabel, ControlValue, Verdict};

/// Marker phrases (case-insensitive) that the keyword backend treats as evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicRules {
    /// Answers agreeing with the affidavit.
    pub entail: Vec<String>,
    /// Answers contradicting the affidavit.
    pub contradict: Vec<String>,
    pub ambiguity: Vec<String>,
    pub overconfidence: Vec<String>,
    pub half_truths: Vec<String>,
}

impl Default for HeuristicRules {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        HeuristicRules {
            entail: v(&["tennessee"]),
            contradict: v(&["1931"]),
            ambiguity: v(&["pennsylvania"]),
            overconfidence: v(&["exactly", "absolutely certain"]),
            half_truths: v(&["whatever", "the kind that"]),
        }
    }
}

impl HeuristicRules {
    fn first_hit<'a>(markers: &'a [String], text: &str) -> Option<&'a str> {
        let lower = text.to_lowercase();
        markers
            .iter()
            .find(|m| lower.contains(&m.to_lowercase()))
            .map(String::as_str)
    }

    /// Cue value for one control over answer text, with a short rationale.
    pub fn judge(&self, kind: ControlKind, answers: &str) -> (ControlValue, String) {
        use ControlLabel::*;
        let (label, verdict, why) = match kind {
            ControlKind::Entailment => {
                if let Some(m) = Self::first_hit(&self.contradict, answers) {
                    (Contradiction, Verdict::LikelyImposter, format!("`{m}` conflicts with the affidavit"))
                } else if let Some(m) = Self::first_hit(&self.entail, answers) {
                    (Entail, Verdict::LikelyTruePerson, format!("`{m}` matches the affidavit"))
                } else {
                    (Neutral, Verdict::Inconclusive, "nothing to check against the affidavit".to_string())
                }
            }
            _ => {
                let (markers, hit, miss) = match kind {
                    ControlKind::Ambiguity => (&self.ambiguity, Ambiguous, Unambiguous),
                    ControlKind::Overconfidence => (&self.overconfidence, Overconfident, Neutral),
                    _ => (&self.half_truths, HalfTruth, NoHalfTruth),
                };
                match Self::first_hit(markers, answers) {
                    Some(m) => (hit, Verdict::LikelyImposter, format!("the answer says `{m}`")),
                    None => (miss, Verdict::LikelyTruePerson, "no marker in the answer".to_string()),
                }
            }
        };
        (ControlValue::new(kind, label, verdict).expect("labels drawn from the kind's domain"), why)
    }

    fn answer_score(&self, answer: &str) -> i32 {
        ControlKind::ALL
            .iter()
            .map(|&k| match self.judge(k, answer).0.verdict {
                Verdict::LikelyImposter => -1,
                Verdict::LikelyTruePerson => 1,
                Verdict::Inconclusive => 0,
            })
            .sum()
    }
}

/// Ranks contestants by score; ties go to whoever was addressed first, so the ranking depends
/// on conversation content and order but not on which label a contestant wears. Contestants
/// never addressed come last in label order.
fn rank(tally: &[(ContestantLabel, i32)]) -> [ContestantLabel; 3] {
    let mut scores: Vec<(ContestantLabel, i32, usize)> = Vec::new();
    for &(label, s) in tally {
        match scores.iter_mut().find(|(l, _, _)| *l == label) {
            Some(entry) => entry.1 += s,
            None => {
                let order = scores.len();
                scores.push((label, s, order));
            }
        }
    }
    scores.sort_by_key(|&(_, s, order)| (std::cmp::Reverse(s), order));
    let mut ranking: Vec<ContestantLabel> = scores.iter().map(|(l, _, _)| *l).collect();
    for l in ContestantLabel::ALL {
        if !ranking.contains(&l) {
            ranking.push(l);
        }
    }
    [ranking[0], ranking[1], ranking[2]]
}

fn ranked_completion(ranking: [ContestantLabel; 3], rationale: &str) -> String {
    format!(
        "{rationale}\n1. {} 2. {} 3. {}\n### {}",
        ranking[0], ranking[1], ranking[2], ranking[0]
    )
}

/// Rule-based offline backend. Answers cue prompts from marker phrases, discriminator prompts
/// by tallying cue verdicts per contestant, and task prompts by scoring answers directly.
#[derive(Debug, Clone, Default)]
pub struct HeuristicProvider {
    rules: HeuristicRules,
}

impl HeuristicProvider {
    pub fn new(rules: HeuristicRules) -> Self {
        HeuristicProvider { rules }
    }

    fn cue(&self, user: &str) -> Option<String> {
        let q = inspect_cue_prompt(user)?;
        let answers: String = q
            .snippet_text
            .lines()
            .filter_map(|l| l.strip_prefix("A: "))
            .collect::<Vec<_>>()
            .join("\n");
        let (value, why) = self.rules.judge(q.control, &answers);
        Some(format_control_response(&value, &why))
    }

    fn discriminate(&self, user: &str) -> Option<String> {
        let body = &user[user.find("Annotated conversation:\n")?..];
        let mut tally = Vec::new();
        let mut current = None;
        for line in body.lines() {
            if let Some(rest) = line.strip_prefix("Snippet ") {
                current = rest
                    .split_once("(addressed to ")
                    .and_then(|(_, r)| r.strip_suffix("):"))
                    .and_then(|l| l.parse::<ContestantLabel>().ok());
                if let Some(l) = current {
                    tally.push((l, 0));
                }
            } else if let (Some(l), Some(cue)) = (current, line.strip_prefix("- ")) {
                let s = if cue.contains("likely imposter") {
                    -1
                } else if cue.contains("likely the true person") {
                    1
                } else {
                    0
                };
                tally.push((l, s));
            }
        }
        let ranking = rank(&tally);
        Some(ranked_completion(
            ranking,
            &format!("The cues favour {} most and count against {} most.", ranking[0], ranking[2]),
        ))
    }

    fn task(&self, user: &str) -> Option<String> {
        let start = user.rfind("\nConversations:\n")? + "\nConversations:\n".len();
        let mut tally = Vec::new();
        let mut current = None;
        for line in user[start..].lines() {
            if let Some(q) = line.strip_prefix("Q: ") {
                if let Some(l) = detect_address(q) {
                    current = Some(l);
                }
            } else if let (Some(l), Some(a)) = (current, line.strip_prefix("A: ")) {
                tally.push((l, self.rules.answer_score(a)));
            }
        }
        let ranking = rank(&tally);
        Some(ranked_completion(ranking, &format!("{} answers most like the affidavit.", ranking[0])))
    }
}

#[async_trait]
impl Provider for HeuristicProvider {
    async fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError> {
        let user = &request.user_prompt;
        let text = self
            .cue(user)
            .or_else(|| self.discriminate(user))
            .or_else(|| self.task(user))
            .ok_or_else(|| ProviderError::ScriptedMiss {
                excerpt: user.chars().take(80).collect(),
            })?;
        let mut result = GenerationResult::new(vec![text; request.n_samples as usize]);
        result.provider_meta = BTreeMap::from([("backend".to_string(), serde_json::json!("heuristic"))]);
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ContestantLabel::*;

    #[test]
    fn ties_break_by_first_address() {
        assert_eq!(rank(&[(NumberThree, 1), (NumberOne, 1)]), [NumberThree, NumberOne, NumberTwo]);
        assert_eq!(rank(&[(NumberTwo, -1), (NumberThree, 2), (NumberTwo, 5)]), [NumberTwo, NumberThree, NumberOne]);
    }

    #[test]
    fn rules_cover_every_control() {
        let r = HeuristicRules::default();
        assert_eq!(r.judge(ControlKind::HalfTruths, "Whatever the job needs.").0.label, ControlLabel::HalfTruth);
        assert_eq!(r.judge(ControlKind::Ambiguity, "Back in Pennsylvania").0.verdict, Verdict::LikelyImposter);
        assert_eq!(r.judge(ControlKind::Entailment, "Tennessee, mostly").0.label, ControlLabel::Entail);
        assert_eq!(r.judge(ControlKind::Entailment, "hm").0.verdict, Verdict::Inconclusive);
        assert_eq!(r.judge(ControlKind::Overconfidence, "calm").0.label, ControlLabel::Neutral);
    }
}
