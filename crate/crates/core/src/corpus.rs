//! Game-session corpus: parsing, validation, anonymization and snippet segmentation.
//!
//! A corpus file is UTF-8 JSON Lines, one session per line:
//!
//! ```text
//! {"id":"s001","cc_name":"...","affidavit":"...",
//!  "utterances":[{"speaker":"judge","addressed":"Number One","text":"..."},
//!                {"speaker":"contestant","text":"..."}],
//!  "ground_truth":"Number Two","judge_votes":["Number One"],"judge_ids":["j1"]}
//! ```
//!
//! Utterance indices are positional and are not stored on the wire.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: field `{field}`: {message}")]
    Malformed {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate session id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("session `{session}`: {reason}")]
    Invalid { session: String, reason: String },
    #[error("session `{session}`: orphan answer at utterance {index}")]
    OrphanAnswer { session: String, index: usize },
}

/// One of the three contestant seats. Ordered One < Two < Three for tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ContestantLabel {
    #[serde(rename = "Number One")]
    NumberOne,
    #[serde(rename = "Number Two")]
    NumberTwo,
    #[serde(rename = "Number Three")]
    NumberThree,
}

impl ContestantLabel {
    pub const ALL: [ContestantLabel; 3] = [Self::NumberOne, Self::NumberTwo, Self::NumberThree];

    pub fn index(self) -> usize {
        match self {
            Self::NumberOne => 0,
            Self::NumberTwo => 1,
            Self::NumberThree => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::NumberOne => "Number One",
            Self::NumberTwo => "Number Two",
            Self::NumberThree => "Number Three",
        }
    }

    /// The numeral word ("one", "two", "three") in lowercase.
    pub fn numeral(self) -> &'static str {
        match self {
            Self::NumberOne => "one",
            Self::NumberTwo => "two",
            Self::NumberThree => "three",
        }
    }

    fn from_numeral(word: &str) -> Option<Self> {
        match word.to_ascii_lowercase().as_str() {
            "one" => Some(Self::NumberOne),
            "two" => Some(Self::NumberTwo),
            "three" => Some(Self::NumberThree),
            _ => None,
        }
    }
}

impl fmt::Display for ContestantLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContestantLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(n), Some(word), None) if n.eq_ignore_ascii_case("number") => {
                Self::from_numeral(word).ok_or_else(|| format!("unknown contestant label `{s}`"))
            }
            _ => Err(format!("unknown contestant label `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Judge,
    Contestant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub index: usize,
    pub speaker: Speaker,
    /// Explicit addressee; only ever set on judge questions.
    pub addressed: Option<ContestantLabel>,
    pub text: String,
}

static LABEL_MENTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(number)(\s+)(one|two|three)\b").unwrap());

impl Utterance {
    /// The contestant this utterance addresses: the explicit field if present, otherwise a
    /// "number one/two/three" mention inside the first clause of a judge question.
    pub fn resolved_address(&self) -> Option<ContestantLabel> {
        if self.speaker != Speaker::Judge {
            return None;
        }
        self.addressed.or_else(|| detect_address(&self.text))
    }
}

/// Finds the first "number one|two|three" mention in the first clause of `text`.
///
/// A clause ends at the first `?`, `.`, `!` or `;`.
pub fn detect_address(text: &str) -> Option<ContestantLabel> {
    let end = text.find(['?', '.', '!', ';']).unwrap_or(text.len());
    LABEL_MENTION
        .captures(&text[..end])
        .and_then(|c| ContestantLabel::from_numeral(&c[3]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: String,
    pub cc_name: String,
    pub affidavit: String,
    pub utterances: Vec<Utterance>,
    pub ground_truth: ContestantLabel,
    pub judge_votes: Vec<ContestantLabel>,
    pub judge_ids: Vec<String>,
}

impl Session {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |reason: String| CorpusError::Invalid {
            session: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(invalid("empty session id".into()));
        }
        if self.affidavit.trim().is_empty() {
            return Err(invalid("affidavit is empty".into()));
        }
        if self.utterances.is_empty() {
            return Err(invalid("no utterances".into()));
        }
        if self.judge_votes.len() > 4 {
            return Err(invalid(format!("{} judge votes (at most 4)", self.judge_votes.len())));
        }
        if self.judge_votes.len() != self.judge_ids.len() {
            return Err(invalid(format!(
                "{} judge votes but {} judge ids",
                self.judge_votes.len(),
                self.judge_ids.len()
            )));
        }
        let mut seen_address = false;
        for (position, u) in self.utterances.iter().enumerate() {
            if u.index != position {
                return Err(invalid(format!(
                    "utterance at position {position} has index {}",
                    u.index
                )));
            }
            if u.text.trim().is_empty() {
                return Err(invalid(format!("utterance {position} has empty text")));
            }
            match u.speaker {
                Speaker::Contestant if u.addressed.is_some() => {
                    return Err(invalid(format!(
                        "contestant utterance {position} carries an addressee"
                    )));
                }
                Speaker::Contestant if !seen_address => {
                    return Err(CorpusError::OrphanAnswer {
                        session: self.id.clone(),
                        index: position,
                    });
                }
                Speaker::Judge if u.resolved_address().is_some() => seen_address = true,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn has_votes(&self) -> bool {
        !self.judge_votes.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    speaker: Speaker,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    addressed: Option<ContestantLabel>,
    text: String,
}

/// Wire form of a session; field order here fixes the serialized field order.
#[derive(Serialize, Deserialize)]
struct SessionRecord {
    id: String,
    cc_name: String,
    affidavit: String,
    utterances: Vec<UtteranceRecord>,
    ground_truth: ContestantLabel,
    #[serde(default)]
    judge_votes: Vec<ContestantLabel>,
    #[serde(default)]
    judge_ids: Vec<String>,
}

impl From<SessionRecord> for Session {
    fn from(r: SessionRecord) -> Self {
        Session {
            id: r.id,
            cc_name: r.cc_name,
            affidavit: r.affidavit,
            utterances: r
                .utterances
                .into_iter()
                .enumerate()
                .map(|(index, u)| Utterance {
                    index,
                    speaker: u.speaker,
                    addressed: u.addressed,
                    text: u.text,
                })
                .collect(),
            ground_truth: r.ground_truth,
            judge_votes: r.judge_votes,
            judge_ids: r.judge_ids,
        }
    }
}

impl From<&Session> for SessionRecord {
    fn from(s: &Session) -> Self {
        SessionRecord {
            id: s.id.clone(),
            cc_name: s.cc_name.clone(),
            affidavit: s.affidavit.clone(),
            utterances: s
                .utterances
                .iter()
                .map(|u| UtteranceRecord {
                    speaker: u.speaker,
                    addressed: u.addressed,
                    text: u.text.clone(),
                })
                .collect(),
            ground_truth: s.ground_truth,
            judge_votes: s.judge_votes.clone(),
            judge_ids: s.judge_ids.clone(),
        }
    }
}

/// Decodes one corpus line without checking session invariants.
pub fn parse_session_record(text: &str, line: usize) -> Result<Session, CorpusError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let record: SessionRecord =
        serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            CorpusError::Malformed {
                line,
                field: if path == "." { "<record>".into() } else { path },
                message: e.into_inner().to_string(),
            }
        })?;
    Ok(Session::from(record))
}

/// Parses and validates one corpus line. `line` is 1-based and only used in error messages.
pub fn parse_session_line(text: &str, line: usize) -> Result<Session, CorpusError> {
    let session = parse_session_record(text, line)?;
    session.validate().map_err(|e| match e {
        CorpusError::Invalid { session, reason } => CorpusError::Invalid {
            session,
            reason: format!("line {line}: {reason}"),
        },
        other => other,
    })?;
    Ok(session)
}

/// Parses corpus text. Blank lines are skipped.
pub fn parse_corpus_str(text: &str) -> Result<Vec<Session>, CorpusError> {
    let mut ids = HashSet::new();
    let mut sessions = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let session = parse_session_line(raw, i + 1)?;
        if !ids.insert(session.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: i + 1,
                id: session.id,
            });
        }
        sessions.push(session);
    }
    Ok(sessions)
}

pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Vec<Session>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus_str(&text)
}

pub fn serialize_session(session: &Session) -> String {
    serde_json::to_string(&SessionRecord::from(session)).expect("session record serializes")
}

/// Serializes sessions as JSON Lines (trailing newline included).
pub fn serialize_corpus(sessions: &[Session]) -> String {
    let mut out = String::new();
    for s in sessions {
        out.push_str(&serialize_session(s));
        out.push('\n');
    }
    out
}

/// A run of question/answer pairs addressed to one contestant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QaPair {
    pub question: UtteranceView,
    pub answers: Vec<UtteranceView>,
}

/// Serializable projection of an utterance used inside snippets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UtteranceView {
    pub index: usize,
    pub text: String,
}

impl From<&Utterance> for UtteranceView {
    fn from(u: &Utterance) -> Self {
        UtteranceView {
            index: u.index,
            text: u.text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Snippet {
    pub session_id: String,
    pub contestant: ContestantLabel,
    pub qa_pairs: Vec<QaPair>,
    /// First and last utterance index covered, inclusive.
    pub span: (usize, usize),
}

impl Snippet {
    pub fn utterance_count(&self) -> usize {
        self.span.1 - self.span.0 + 1
    }
}

/// Splits a session into snippets.
///
/// An addressed judge question opens a new snippet only when it names a contestant other than
/// the current one. Unaddressed questions join the current snippet and contestant utterances
/// fold into the answer list of the latest question. Judge questions before the first addressed
/// question are not part of any snippet.
pub fn segment_snippets(session: &Session) -> Result<Vec<Snippet>, CorpusError> {
    let mut snippets: Vec<Snippet> = Vec::new();
    for u in &session.utterances {
        match u.speaker {
            Speaker::Judge => {
                let address = u.resolved_address();
                let opens = match (address, snippets.last()) {
                    (Some(a), Some(current)) => a != current.contestant,
                    (Some(_), None) => true,
                    (None, _) => false,
                };
                if opens {
                    snippets.push(Snippet {
                        session_id: session.id.clone(),
                        contestant: address.expect("opening question is addressed"),
                        qa_pairs: Vec::new(),
                        span: (u.index, u.index),
                    });
                }
                if let Some(current) = snippets.last_mut() {
                    current.qa_pairs.push(QaPair {
                        question: u.into(),
                        answers: Vec::new(),
                    });
                    current.span.1 = u.index;
                }
            }
            Speaker::Contestant => {
                let current = snippets.last_mut().ok_or(CorpusError::OrphanAnswer {
                    session: session.id.clone(),
                    index: u.index,
                })?;
                let pair = current
                    .qa_pairs
                    .last_mut()
                    .expect("snippets open with a question");
                pair.answers.push(u.into());
                current.span.1 = u.index;
            }
        }
    }
    Ok(snippets)
}

/// A bijection over the three contestant labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabelPermutation([ContestantLabel; 3]);

impl LabelPermutation {
    pub const IDENTITY: LabelPermutation = LabelPermutation(ContestantLabel::ALL);

    /// `images[i]` is where the i-th label (One, Two, Three) is sent.
    pub fn new(images: [ContestantLabel; 3]) -> Result<Self, String> {
        let distinct: BTreeSet<_> = images.iter().collect();
        if distinct.len() != 3 {
            return Err(format!("{images:?} is not a bijection"));
        }
        Ok(Self(images))
    }

    pub fn swap(a: ContestantLabel, b: ContestantLabel) -> Self {
        let mut images = ContestantLabel::ALL;
        images.swap(a.index(), b.index());
        Self(images)
    }

    /// All six permutations.
    pub fn all() -> Vec<LabelPermutation> {
        use ContestantLabel::*;
        [
            [NumberOne, NumberTwo, NumberThree],
            [NumberOne, NumberThree, NumberTwo],
            [NumberTwo, NumberOne, NumberThree],
            [NumberTwo, NumberThree, NumberOne],
            [NumberThree, NumberOne, NumberTwo],
            [NumberThree, NumberTwo, NumberOne],
        ]
        .into_iter()
        .map(LabelPermutation)
        .collect()
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        let all = Self::all();
        all[rng.random_range(0..all.len())]
    }

    /// Images of One, Two, Three in order; also a ranking of the three labels.
    pub fn images(&self) -> [ContestantLabel; 3] {
        self.0
    }

    pub fn apply(&self, label: ContestantLabel) -> ContestantLabel {
        self.0[label.index()]
    }

    pub fn inverse(&self) -> Self {
        let mut images = ContestantLabel::ALL;
        for label in ContestantLabel::ALL {
            images[self.apply(label).index()] = label;
        }
        Self(images)
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^Participant_\d+$").unwrap());

/// Rewrites every "number one/two/three" mention through `perm`, keeping the
/// casing style (lower, Capitalized, UPPER) of the numeral.
pub fn permute_label_mentions(text: &str, perm: &LabelPermutation) -> String {
    LABEL_MENTION
        .replace_all(text, |c: &Captures| {
            let original = &c[3];
            let label = ContestantLabel::from_numeral(original).expect("regex restricts numerals");
            let target = perm.apply(label).numeral();
            format!("{}{}{}", &c[1], &c[2], match_case(original, target))
        })
        .into_owned()
}

fn match_case(model: &str, word: &str) -> String {
    if model.chars().all(|c| c.is_ascii_uppercase()) {
        word.to_ascii_uppercase()
    } else if model.chars().next().is_some_and(|c| c.is_ascii_uppercase()) {
        let mut out = word[..1].to_ascii_uppercase();
        out.push_str(&word[1..]);
        out
    } else {
        word.to_string()
    }
}

/// Maps each proper name to a `Participant_X` placeholder, X drawn from `seed`.
///
/// Names that already look like placeholders keep their text. Distinct names receive distinct
/// placeholders; assignment depends only on the seed and the order of `names`.
fn placeholder_map(names: &[&str], seed: u64) -> BTreeMap<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = BTreeSet::new();
    let mut map = BTreeMap::new();
    for name in names {
        let name = name.trim();
        if name.is_empty() || map.contains_key(name) {
            continue;
        }
        if PLACEHOLDER.is_match(name) {
            map.insert(name.to_string(), name.to_string());
            continue;
        }
        let placeholder = loop {
            let x: u32 = rng.random_range(1..100_000);
            if used.insert(x) {
                break format!("Participant_{x}");
            }
        };
        map.insert(name.to_string(), placeholder);
    }
    map
}

fn replace_names(text: &str, names: &BTreeMap<String, String>) -> String {
    // Longest names first so "Jane Doe" wins over "Jane".
    let mut ordered: Vec<_> = names.iter().filter(|(k, v)| k != v).collect();
    ordered.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(b.0)));
    let mut out = text.to_string();
    for (name, placeholder) in ordered {
        out = out.replace(name.as_str(), placeholder);
    }
    out
}

/// Relabels contestants through `perm` and replaces `cc_name` plus any of `names` with
/// `Participant_X` placeholders.
pub fn anonymize(
    session: &Session,
    perm: &LabelPermutation,
    seed: u64,
    names: &[String],
) -> Session {
    let mut all_names: Vec<&str> = vec![session.cc_name.as_str()];
    all_names.extend(names.iter().map(String::as_str));
    let placeholders = placeholder_map(&all_names, seed);
    let rewrite = |text: &str| permute_label_mentions(&replace_names(text, &placeholders), perm);
    Session {
        id: session.id.clone(),
        cc_name: placeholders
            .get(session.cc_name.trim())
            .cloned()
            .unwrap_or_else(|| session.cc_name.clone()),
        affidavit: rewrite(&session.affidavit),
        utterances: session
            .utterances
            .iter()
            .map(|u| Utterance {
                index: u.index,
                speaker: u.speaker,
                addressed: u.addressed.map(|a| perm.apply(a)),
                text: rewrite(&u.text),
            })
            .collect(),
        ground_truth: perm.apply(session.ground_truth),
        judge_votes: session.judge_votes.iter().map(|v| perm.apply(*v)).collect(),
        judge_ids: session.judge_ids.clone(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_sessions: usize,
    pub n_words: usize,
    pub n_utterances: usize,
    /// Distinct (session, contestant) seats addressed at least once.
    pub n_unique_contestant_slots: usize,
    pub n_unique_judges: usize,
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn corpus_stats(corpus: &[Session]) -> CorpusStats {
    let mut slots = HashSet::new();
    let mut judges = HashSet::new();
    let mut stats = CorpusStats {
        n_sessions: corpus.len(),
        ..CorpusStats::default()
    };
    for s in corpus {
        stats.n_words += word_count(&s.affidavit);
        stats.n_utterances += s.utterances.len();
        for u in &s.utterances {
            stats.n_words += word_count(&u.text);
            if let Some(label) = u.resolved_address() {
                slots.insert((s.id.as_str(), label));
            }
        }
        judges.extend(s.judge_ids.iter().map(String::as_str));
    }
    stats.n_unique_contestant_slots = slots.len();
    stats.n_unique_judges = judges.len();
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use ContestantLabel::*;

    fn judge(text: &str, addressed: Option<ContestantLabel>) -> (Speaker, Option<ContestantLabel>, String) {
        (Speaker::Judge, addressed, text.to_string())
    }

    fn answer(text: &str) -> (Speaker, Option<ContestantLabel>, String) {
        (Speaker::Contestant, None, text.to_string())
    }

    fn session(parts: Vec<(Speaker, Option<ContestantLabel>, String)>) -> Session {
        Session {
            id: "t1".into(),
            cc_name: "Jane Doe".into(),
            affidavit: "I, Jane Doe, paint barns.".into(),
            utterances: parts
                .into_iter()
                .enumerate()
                .map(|(index, (speaker, addressed, text))| Utterance {
                    index,
                    speaker,
                    addressed,
                    text,
                })
                .collect(),
            ground_truth: NumberOne,
            judge_votes: vec![],
            judge_ids: vec![],
        }
    }

    #[test]
    fn label_order_and_parsing() {
        assert!(NumberOne < NumberTwo && NumberTwo < NumberThree);
        assert_eq!("number three".parse::<ContestantLabel>(), Ok(NumberThree));
        assert!("Number Four".parse::<ContestantLabel>().is_err());
    }

    #[test]
    fn addressing_rule_splits_on_new_contestant_only() {
        let s = session(vec![
            judge("Number one, where do you live?", None),
            answer("Ohio."),
            judge("And what do you do there?", None),
            answer("Paint."),
            judge("Number two, same question.", None),
            answer("Texas."),
        ]);
        let snippets = segment_snippets(&s).unwrap();
        assert_eq!(snippets.len(), 2);
        assert_eq!(snippets[0].contestant, NumberOne);
        assert_eq!(snippets[0].qa_pairs.len(), 2);
        assert_eq!(snippets[1].contestant, NumberTwo);
        assert_eq!(snippets[1].qa_pairs.len(), 1);
        assert_eq!(snippets[0].span, (0, 3));
        assert_eq!(snippets[1].span, (4, 5));
    }

    #[test]
    fn readdressing_same_contestant_does_not_split() {
        let s = session(vec![
            judge("Number one, hi.", None),
            answer("Hi."),
            judge("Number one, again?", None),
            answer("Yes."),
        ]);
        let snippets = segment_snippets(&s).unwrap();
        assert_eq!(snippets.len(), 1);
        assert_eq!(snippets[0].qa_pairs.len(), 2);
    }

    #[test]
    fn explicit_address_takes_precedence() {
        let s = session(vec![
            judge("Number one, tell number two something.", Some(NumberThree)),
            answer("Sure."),
        ]);
        assert_eq!(segment_snippets(&s).unwrap()[0].contestant, NumberThree);
    }

    #[test]
    fn address_only_detected_in_first_clause() {
        assert_eq!(detect_address("Where do you live? Number two knows."), None);
        assert_eq!(detect_address("Well, NUMBER TWO, tell me"), Some(NumberTwo));
    }

    #[test]
    fn consecutive_answers_fold_into_one_pair() {
        let s = session(vec![
            judge("Number three, what colour?", None),
            answer("Red."),
            answer("Well, crimson."),
        ]);
        let snippets = segment_snippets(&s).unwrap();
        assert_eq!(snippets[0].qa_pairs[0].answers.len(), 2);
    }

    #[test]
    fn orphan_answer_is_an_error() {
        let s = session(vec![answer("Hello."), judge("Number one?", None)]);
        assert!(matches!(
            segment_snippets(&s),
            Err(CorpusError::OrphanAnswer { index: 0, .. })
        ));
        assert!(matches!(s.validate(), Err(CorpusError::OrphanAnswer { .. })));
    }

    #[test]
    fn unaddressed_preamble_is_not_covered() {
        let s = session(vec![
            judge("Good evening everyone.", None),
            judge("Number two, your name?", None),
            answer("Jane."),
        ]);
        let snippets = segment_snippets(&s).unwrap();
        assert_eq!(snippets.len(), 1);
        assert_eq!(snippets[0].span, (1, 2));
    }

    #[test]
    fn contestant_with_address_is_invalid() {
        let mut s = session(vec![judge("Number one?", None), answer("Yes.")]);
        s.utterances[1].addressed = Some(NumberOne);
        assert!(matches!(s.validate(), Err(CorpusError::Invalid { .. })));
    }

    #[test]
    fn ground_truth_outside_label_space_names_the_field() {
        let line = r#"{"id":"a","cc_name":"X","affidavit":"A.","utterances":[{"speaker":"judge","addressed":"Number One","text":"Hi?"}],"ground_truth":"Number Four","judge_votes":[],"judge_ids":[]}"#;
        match parse_session_line(line, 7) {
            Err(CorpusError::Malformed { line, field, .. }) => {
                assert_eq!(line, 7);
                assert_eq!(field, "ground_truth");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let s = session(vec![judge("Number one?", None), answer("Yes.")]);
        let text = serialize_corpus(&[s.clone(), s]);
        assert!(matches!(
            parse_corpus_str(&text),
            Err(CorpusError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn serializer_field_order_is_fixed() {
        let s = session(vec![judge("Number one?", Some(NumberOne)), answer("Yes.")]);
        let line = serialize_session(&s);
        let keys = ["\"id\"", "\"cc_name\"", "\"affidavit\"", "\"utterances\"", "\"ground_truth\"", "\"judge_votes\"", "\"judge_ids\""];
        let positions: Vec<_> = keys.iter().map(|k| line.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(parse_corpus_str(&line).unwrap(), vec![s]);
    }

    #[test]
    fn label_mentions_are_rewritten() {
        let perm = LabelPermutation::swap(NumberOne, NumberTwo);
        assert_eq!(
            permute_label_mentions("Number one, where do you live?", &perm),
            "Number two, where do you live?"
        );
        assert_eq!(
            permute_label_mentions("NUMBER TWO and number Three", &perm),
            "NUMBER ONE and number Three"
        );
    }

    #[test]
    fn identity_anonymization_only_replaces_names() {
        let s = session(vec![judge("Number one, are you Jane Doe?", None), answer("Yes.")]);
        let a = anonymize(&s, &LabelPermutation::IDENTITY, 3, &[]);
        assert!(a.cc_name.starts_with("Participant_"));
        assert_eq!(a.ground_truth, s.ground_truth);
        assert_eq!(a.utterances[0].text, format!("Number one, are you {}?", a.cc_name));
        assert_eq!(a.affidavit, format!("I, {}, paint barns.", a.cc_name));
        // Deterministic in the seed.
        assert_eq!(a, anonymize(&s, &LabelPermutation::IDENTITY, 3, &[]));
    }

    #[test]
    fn swap_and_inverse_restore_session() {
        let mut s = session(vec![judge("Number one, hi?", Some(NumberOne)), answer("Hi.")]);
        s.cc_name = "Participant_12".into();
        s.judge_votes = vec![NumberOne, NumberThree];
        s.judge_ids = vec!["a".into(), "b".into()];
        let perm = LabelPermutation::swap(NumberOne, NumberThree);
        let a = anonymize(&s, &perm, 9, &[]);
        assert_eq!(a.ground_truth, NumberThree);
        assert_eq!(a.judge_votes, vec![NumberThree, NumberOne]);
        assert_eq!(a.utterances[0].text, "Number three, hi?");
        let back = anonymize(&a, &perm.inverse(), 9, &[]);
        assert_eq!(serialize_session(&back), serialize_session(&s));
    }

    #[test]
    fn extra_names_get_distinct_placeholders() {
        let s = session(vec![judge("Number one, did Bob meet Alice?", None), answer("No.")]);
        let a = anonymize(&s, &LabelPermutation::IDENTITY, 1, &["Bob".into(), "Alice".into()]);
        let text = &a.utterances[0].text;
        assert!(!text.contains("Bob") && !text.contains("Alice"));
        assert_eq!(text.matches("Participant_").count(), 2);
    }

    #[test]
    fn stats_count_words_over_affidavit_and_utterances() {
        assert_eq!(corpus_stats(&[]), CorpusStats::default());
        let mut s = session(vec![
            judge("Number one here?", None),
            answer("yes I am"),
            judge("what is that", None),
            answer("a blue barn"),
        ]);
        s.affidavit = "one two three four five six".into();
        s.judge_ids = vec!["j1".into(), "j2".into()];
        s.judge_votes = vec![NumberOne, NumberOne];
        let stats = corpus_stats(&[s]);
        assert_eq!(stats.n_words, 18);
        assert_eq!(stats.n_utterances, 4);
        assert_eq!(stats.n_unique_contestant_slots, 1);
        assert_eq!(stats.n_unique_judges, 2);
    }

    #[test]
    fn permutation_inverse_composes_to_identity() {
        for p in LabelPermutation::all() {
            for l in ContestantLabel::ALL {
                assert_eq!(p.inverse().apply(p.apply(l)), l);
            }
        }
        assert!(LabelPermutation::new([NumberOne, NumberOne, NumberTwo]).is_err());
    }
}
