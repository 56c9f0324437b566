//! HTTP service for the human study: judges read an affidavit, reveal snippets one at a time,
//! optionally see model cues, and vote; raters compare and grade model explanations.
//!
//! Every mutation is appended to a JSONL event log and synced before the response is sent.
//! Startup replays the log, so state (and the admin export) survives restarts.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::sync::Mutex;

use crate::corpus::{segment_snippets, ContestantLabel, CorpusError, Session, Snippet};
use crate::evaluation::{EvilRating, Preference};
use crate::pipeline::{ControlAnnotation, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Unassisted,
    /// Model top-1 only.
    BlackBox,
    /// Model top-1, cue annotations and explanation.
    GlassBox,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Unassisted, Condition::BlackBox, Condition::GlassBox];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// The two explanation sources compared in pairwise items. A is the system under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub session: String,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyAssignment {
    pub participant_id: String,
    pub sessions: Vec<AssignmentEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairItem {
    pub id: String,
    pub session_id: String,
    /// Seed from which the left/right placement is drawn.
    pub seed: u64,
    /// System shown on the left.
    pub left: System,
    pub explanation_a: String,
    pub explanation_b: String,
}

impl PairItem {
    pub fn system_at(&self, side: Side) -> System {
        match (side, self.left) {
            (Side::Left, s) => s,
            (Side::Right, System::A) => System::B,
            (Side::Right, System::B) => System::A,
        }
    }

    fn explanation(&self, system: System) -> &str {
        match system {
            System::A => &self.explanation_a,
            System::B => &self.explanation_b,
        }
    }
}

fn item_seed(study_seed: u64, item_id: &str) -> u64 {
    let digest = Sha256::digest(format!("{study_seed}:{item_id}"));
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

struct StudySession {
    session: Session,
    snippets: Vec<Snippet>,
    prediction: Option<Prediction>,
}

/// Immutable study material, shared by every request without locking.
pub struct StudyData {
    sessions: Vec<StudySession>,
    index: BTreeMap<String, usize>,
    pair_items: Vec<PairItem>,
}

impl StudyData {
    /// `cue_predictions` back the assisted conditions; sessions without one are only shown
    /// unassisted. When `compare` is given, pairwise items are the sessions both systems got
    /// right, in session order.
    pub fn new(
        sessions: Vec<Session>,
        cue_predictions: Vec<Prediction>,
        compare: Option<(Vec<Prediction>, Vec<Prediction>)>,
        seed: u64,
    ) -> Result<Self, CorpusError> {
        let mut by_id: BTreeMap<String, Prediction> =
            cue_predictions.into_iter().map(|p| (p.session_id.clone(), p)).collect();
        let mut study = Vec::new();
        let mut index = BTreeMap::new();
        for session in sessions {
            let snippets = segment_snippets(&session)?;
            index.insert(session.id.clone(), study.len());
            study.push(StudySession {
                prediction: by_id.remove(&session.id),
                snippets,
                session,
            });
        }
        let mut pair_items = Vec::new();
        if let Some((a, b)) = compare {
            let a: BTreeMap<&str, &Prediction> = a.iter().map(|p| (p.session_id.as_str(), p)).collect();
            let b: BTreeMap<&str, &Prediction> = b.iter().map(|p| (p.session_id.as_str(), p)).collect();
            for s in &study {
                let truth = s.session.ground_truth;
                let (Some(pa), Some(pb)) = (a.get(s.session.id.as_str()), b.get(s.session.id.as_str())) else {
                    continue;
                };
                if pa.is_correct(truth) && pb.is_correct(truth) {
                    let id = format!("pair-{}", s.session.id);
                    let seed = item_seed(seed, &id);
                    let left = if ChaCha8Rng::seed_from_u64(seed).random::<bool>() { System::A } else { System::B };
                    pair_items.push(PairItem {
                        id,
                        session_id: s.session.id.clone(),
                        seed,
                        left,
                        explanation_a: pa.explanation.clone(),
                        explanation_b: pb.explanation.clone(),
                    });
                }
            }
        }
        Ok(StudyData { sessions: study, index, pair_items })
    }

    pub fn pair_items(&self) -> &[PairItem] {
        &self.pair_items
    }

    fn get(&self, id: &str) -> Option<&StudySession> {
        self.index.get(id).map(|&i| &self.sessions[i])
    }

    /// Round-robin: the k-th registered participant starts the condition cycle at offset k.
    pub fn assignment_for(&self, participant: &str, ordinal: usize) -> StudyAssignment {
        let mut offset = ordinal;
        let sessions = self
            .sessions
            .iter()
            .map(|s| {
                let condition = if s.prediction.is_some() {
                    let c = Condition::ALL[offset % 3];
                    offset += 1;
                    c
                } else {
                    Condition::Unassisted
                };
                AssignmentEntry { session: s.session.id.clone(), condition }
            })
            .collect();
        StudyAssignment { participant_id: participant.to_string(), sessions }
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Registered { participant: String, ordinal: usize, at: u64 },
    Revealed { participant: String, session: String, upto: usize, at: u64 },
    Voted { participant: String, session: String, vote: ContestantLabel, at: u64 },
    PairJudged { rater: String, item: String, choice: Side, preferred: System, at: u64 },
    EvilRated { rater: String, item: String, side: Side, system: System, rating: EvilRating, at: u64 },
}

/// Export rows: the event log folded into per-judgment records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudyRecord {
    Vote {
        session_id: String,
        participant_id: String,
        condition: Condition,
        vote: ContestantLabel,
        opened_at: u64,
        voted_at: u64,
    },
    Pair {
        rater_id: String,
        item: String,
        session_id: String,
        choice: Side,
        preferred: System,
        at: u64,
    },
    Evil {
        rater_id: String,
        item: String,
        session_id: String,
        system: System,
        rating: EvilRating,
        at: u64,
    },
}

#[derive(Default)]
struct Progress {
    ordinal: usize,
    assignment: Vec<AssignmentEntry>,
    /// Deepest snippet served per session.
    revealed: BTreeMap<String, usize>,
    opened_at: BTreeMap<String, u64>,
    voted: BTreeSet<String>,
}

#[derive(Default)]
struct StudyState {
    participants: BTreeMap<String, Progress>,
    records: Vec<StudyRecord>,
    pair_done: BTreeSet<(String, String)>,
    evil_done: BTreeSet<(String, String, Side)>,
}

impl StudyState {
    fn apply(&mut self, data: &StudyData, event: &Event) {
        match event {
            Event::Registered { participant, ordinal, .. } => {
                let assignment = data.assignment_for(participant, *ordinal).sessions;
                self.participants.insert(
                    participant.clone(),
                    Progress { ordinal: *ordinal, assignment, ..Progress::default() },
                );
            }
            Event::Revealed { participant, session, upto, at } => {
                if let Some(p) = self.participants.get_mut(participant) {
                    p.opened_at.entry(session.clone()).or_insert(*at);
                    let depth = p.revealed.entry(session.clone()).or_insert(*upto);
                    *depth = (*depth).max(*upto);
                }
            }
            Event::Voted { participant, session, vote, at } => {
                if let Some(p) = self.participants.get_mut(participant) {
                    p.voted.insert(session.clone());
                    let condition = p
                        .assignment
                        .iter()
                        .find(|e| &e.session == session)
                        .map(|e| e.condition)
                        .unwrap_or(Condition::Unassisted);
                    self.records.push(StudyRecord::Vote {
                        session_id: session.clone(),
                        participant_id: participant.clone(),
                        condition,
                        vote: *vote,
                        opened_at: p.opened_at.get(session).copied().unwrap_or(*at),
                        voted_at: *at,
                    });
                }
            }
            Event::PairJudged { rater, item, choice, preferred, at } => {
                self.pair_done.insert((rater.clone(), item.clone()));
                self.records.push(StudyRecord::Pair {
                    rater_id: rater.clone(),
                    item: item.clone(),
                    session_id: session_of_item(data, item),
                    choice: *choice,
                    preferred: *preferred,
                    at: *at,
                });
            }
            Event::EvilRated { rater, item, side, system, rating, at } => {
                self.evil_done.insert((rater.clone(), item.clone(), *side));
                self.records.push(StudyRecord::Evil {
                    rater_id: rater.clone(),
                    item: item.clone(),
                    session_id: session_of_item(data, item),
                    system: *system,
                    rating: *rating,
                    at: *at,
                });
            }
        }
    }
}

fn session_of_item(data: &StudyData, item: &str) -> String {
    data.pair_items
        .iter()
        .find(|i| i.id == item)
        .map(|i| i.session_id.clone())
        .unwrap_or_default()
}

struct Ledger {
    state: StudyState,
    log: File,
}

impl Ledger {
    /// Appends and syncs before the in-memory state changes.
    fn commit(&mut self, data: &StudyData, event: Event) -> Result<(), ApiError> {
        let mut line = serde_json::to_string(&event).expect("events serialize");
        line.push('\n');
        self.log
            .write_all(line.as_bytes())
            .and_then(|_| self.log.sync_data())
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("event log: {e}")))?;
        self.state.apply(data, &event);
        Ok(())
    }
}

pub struct AppState {
    data: Arc<StudyData>,
    ledger: Mutex<Ledger>,
    admin_token: Option<String>,
    log_path: PathBuf,
}

impl AppState {
    /// Opens (or creates) the event log and replays it. A torn final line is truncated away.
    pub fn open(data: StudyData, log_path: impl AsRef<Path>, admin_token: Option<String>) -> std::io::Result<Self> {
        let log_path = log_path.as_ref().to_path_buf();
        if let Some(parent) = log_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut state = StudyState::default();
        let mut valid_len = 0u64;
        if let Ok(file) = File::open(&log_path) {
            let mut reader = BufReader::new(file);
            let mut line = String::new();
            loop {
                line.clear();
                let n = reader.read_line(&mut line)?;
                if n == 0 || !line.ends_with('\n') {
                    break;
                }
                let event: Event = serde_json::from_str(line.trim_end()).map_err(|e| {
                    std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", log_path.display()))
                })?;
                state.apply(&data, &event);
                valid_len += n as u64;
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        log.set_len(valid_len)?;
        Ok(AppState {
            data: Arc::new(data),
            ledger: Mutex::new(Ledger { state, log }),
            admin_token: admin_token.filter(|t| !t.is_empty()),
            log_path,
        })
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    /// Folded records, in log order.
    pub async fn records(&self) -> Vec<StudyRecord> {
        self.ledger.lock().await.state.records.clone()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed body: {e}")))
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn unknown(who: &str) -> ApiError {
    ApiError::new(StatusCode::UNAUTHORIZED, format!("unknown participant `{who}`"))
}

fn check_admin(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let expected = state
        .admin_token
        .as_deref()
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "admin token not configured"))?;
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given == Some(expected) {
        Ok(())
    } else {
        Err(ApiError::new(StatusCode::UNAUTHORIZED, "bad or missing bearer token"))
    }
}

fn session_view(study: &StudySession, condition: Condition, upto: usize) -> Value {
    json!({
        "session": study.session.id,
        "condition": condition,
        "cc_name": study.session.cc_name,
        "affidavit": study.session.affidavit,
        "n_snippets": study.snippets.len(),
        "revealed": &study.snippets[..=upto],
        "complete": upto + 1 == study.snippets.len(),
    })
}

#[derive(Deserialize)]
struct ParticipantQuery {
    participant: String,
}

async fn study_next(State(state): State<Arc<AppState>>, Query(q): Query<ParticipantQuery>) -> ApiResult {
    let data = state.data.clone();
    let mut ledger = state.ledger.lock().await;
    let progress = ledger.state.participants.get(&q.participant).ok_or_else(|| unknown(&q.participant))?;
    let total = progress.assignment.len();
    let Some((position, entry)) = progress
        .assignment
        .iter()
        .enumerate()
        .find(|(_, e)| !progress.voted.contains(&e.session))
        .map(|(i, e)| (i, e.clone()))
    else {
        return Ok(Json(json!({ "done": true, "total": total })));
    };
    let study = data.get(&entry.session).expect("assignments name study sessions");
    let upto = match progress.revealed.get(&entry.session) {
        Some(&depth) => depth,
        None => {
            ledger.commit(
                &data,
                Event::Revealed { participant: q.participant.clone(), session: entry.session.clone(), upto: 0, at: now_ms() },
            )?;
            0
        }
    };
    let mut view = session_view(study, entry.condition, upto);
    view["done"] = json!(false);
    view["position"] = json!(position);
    view["total"] = json!(total);
    Ok(Json(view))
}

#[derive(Deserialize)]
struct RevealBody {
    participant: String,
    session: String,
    upto: usize,
}

async fn study_reveal(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let body: RevealBody = parse_body(&body)?;
    let data = state.data.clone();
    let mut ledger = state.ledger.lock().await;
    let progress = ledger.state.participants.get(&body.participant).ok_or_else(|| unknown(&body.participant))?;
    let entry = progress
        .assignment
        .iter()
        .find(|e| e.session == body.session)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "session not assigned to participant"))?;
    if progress.voted.contains(&body.session) {
        return Err(ApiError::new(StatusCode::CONFLICT, "already voted"));
    }
    let current = *progress
        .revealed
        .get(&body.session)
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "session not opened"))?;
    let study = data.get(&body.session).expect("assigned");
    if body.upto >= study.snippets.len() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("upto {} out of range for {} snippets", body.upto, study.snippets.len()),
        ));
    }
    if body.upto < current {
        return Err(ApiError::new(StatusCode::CONFLICT, "reveal is monotone"));
    }
    if body.upto > current + 1 {
        return Err(ApiError::new(StatusCode::CONFLICT, "snippets are revealed one at a time"));
    }
    if body.upto > current {
        ledger.commit(
            &data,
            Event::Revealed { participant: body.participant, session: body.session, upto: body.upto, at: now_ms() },
        )?;
    }
    Ok(Json(session_view(study, entry.condition, body.upto)))
}

#[derive(Deserialize)]
struct CueQuery {
    participant: String,
    session: String,
}

#[derive(Serialize)]
struct CueView<'a> {
    snippet_index: usize,
    contestant: ContestantLabel,
    control: crate::prompting::ControlKind,
    label: crate::prompting::ControlLabel,
    verdict: crate::prompting::Verdict,
    rationale: &'a str,
}

impl<'a> From<&'a ControlAnnotation> for CueView<'a> {
    fn from(a: &'a ControlAnnotation) -> Self {
        CueView {
            snippet_index: a.snippet_index,
            contestant: a.contestant,
            control: a.control.kind,
            label: a.control.label,
            verdict: a.control.verdict,
            rationale: &a.rationale,
        }
    }
}

async fn study_cues(State(state): State<Arc<AppState>>, Query(q): Query<CueQuery>) -> ApiResult {
    let ledger = state.ledger.lock().await;
    let progress = ledger.state.participants.get(&q.participant).ok_or_else(|| unknown(&q.participant))?;
    let entry = progress
        .assignment
        .iter()
        .find(|e| e.session == q.session)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "session not assigned to participant"))?;
    let prediction = state.data.get(&q.session).and_then(|s| s.prediction.as_ref());
    let (Some(prediction), true) = (prediction, entry.condition != Condition::Unassisted) else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "no cues under this condition"));
    };
    Ok(Json(match entry.condition {
        Condition::BlackBox => json!({
            "session": q.session,
            "condition": entry.condition,
            "top1": prediction.top1,
        }),
        _ => json!({
            "session": q.session,
            "condition": entry.condition,
            "top1": prediction.top1,
            "ranking": prediction.ranking,
            "explanation": prediction.explanation,
            "annotations": prediction.annotations.iter().map(CueView::from).collect::<Vec<_>>(),
        }),
    }))
}

#[derive(Deserialize)]
struct VoteBody {
    participant: String,
    session: String,
    vote: ContestantLabel,
}

async fn study_vote(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let body: VoteBody = parse_body(&body)?;
    let data = state.data.clone();
    let mut ledger = state.ledger.lock().await;
    let progress = ledger.state.participants.get(&body.participant).ok_or_else(|| unknown(&body.participant))?;
    if !progress.assignment.iter().any(|e| e.session == body.session) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "session not assigned to participant"));
    }
    if progress.voted.contains(&body.session) {
        return Err(ApiError::new(StatusCode::CONFLICT, "already voted"));
    }
    let needed = data.get(&body.session).expect("assigned").snippets.len() - 1;
    if progress.revealed.get(&body.session) != Some(&needed) {
        return Err(ApiError::new(StatusCode::CONFLICT, "reveal incomplete"));
    }
    ledger.commit(
        &data,
        Event::Voted { participant: body.participant, session: body.session.clone(), vote: body.vote, at: now_ms() },
    )?;
    Ok(Json(json!({ "recorded": true, "session": body.session })))
}

#[derive(Deserialize)]
struct RaterQuery {
    rater: String,
}

async fn eval_pair_next(State(state): State<Arc<AppState>>, Query(q): Query<RaterQuery>) -> ApiResult {
    let ledger = state.ledger.lock().await;
    if !ledger.state.participants.contains_key(&q.rater) {
        return Err(unknown(&q.rater));
    }
    let next = state
        .data
        .pair_items
        .iter()
        .find(|i| !ledger.state.pair_done.contains(&(q.rater.clone(), i.id.clone())));
    Ok(Json(match next {
        None => json!({ "done": true }),
        Some(item) => {
            let left = item.system_at(Side::Left);
            let right = item.system_at(Side::Right);
            json!({
                "done": false,
                "item": item.id,
                "left": { "explanation": item.explanation(left) },
                "right": { "explanation": item.explanation(right) },
            })
        }
    }))
}

#[derive(Deserialize)]
struct PairBody {
    rater: String,
    item: String,
    choice: Side,
}

async fn eval_pair_submit(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let body: PairBody = parse_body(&body)?;
    let data = state.data.clone();
    let mut ledger = state.ledger.lock().await;
    if !ledger.state.participants.contains_key(&body.rater) {
        return Err(unknown(&body.rater));
    }
    let item = data
        .pair_items
        .iter()
        .find(|i| i.id == body.item)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown item"))?;
    if ledger.state.pair_done.contains(&(body.rater.clone(), body.item.clone())) {
        return Err(ApiError::new(StatusCode::CONFLICT, "already judged"));
    }
    let preferred = item.system_at(body.choice);
    ledger.commit(
        &data,
        Event::PairJudged { rater: body.rater, item: body.item, choice: body.choice, preferred, at: now_ms() },
    )?;
    Ok(Json(json!({ "recorded": true })))
}

#[derive(Deserialize)]
struct EvilBody {
    rater: String,
    item: String,
    side: Side,
    rating: EvilRating,
}

async fn eval_evil_submit(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult {
    let body: EvilBody = parse_body(&body)?;
    let data = state.data.clone();
    let mut ledger = state.ledger.lock().await;
    if !ledger.state.participants.contains_key(&body.rater) {
        return Err(unknown(&body.rater));
    }
    let item = data
        .pair_items
        .iter()
        .find(|i| i.id == body.item)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown item"))?;
    if ledger.state.evil_done.contains(&(body.rater.clone(), body.item.clone(), body.side)) {
        return Err(ApiError::new(StatusCode::CONFLICT, "already rated"));
    }
    let system = item.system_at(body.side);
    ledger.commit(
        &data,
        Event::EvilRated { rater: body.rater, item: body.item, side: body.side, system, rating: body.rating, at: now_ms() },
    )?;
    Ok(Json(json!({ "recorded": true })))
}

#[derive(Deserialize)]
struct RegisterBody {
    participant: String,
}

async fn admin_register(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    check_admin(&state, &headers)?;
    let body: RegisterBody = parse_body(&body)?;
    if body.participant.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "participant id is empty"));
    }
    let data = state.data.clone();
    let mut ledger = state.ledger.lock().await;
    if !ledger.state.participants.contains_key(&body.participant) {
        let ordinal = ledger.state.participants.len();
        ledger.commit(&data, Event::Registered { participant: body.participant.clone(), ordinal, at: now_ms() })?;
    }
    let ordinal = ledger.state.participants[&body.participant].ordinal;
    Ok(Json(json!(data.assignment_for(&body.participant, ordinal))))
}

async fn admin_export(State(state): State<Arc<AppState>>, headers: HeaderMap) -> Result<Response, ApiError> {
    check_admin(&state, &headers)?;
    let body: String = state
        .records()
        .await
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/study/next", get(study_next))
        .route("/study/reveal", post(study_reveal))
        .route("/study/cues", get(study_cues))
        .route("/study/vote", post(study_vote))
        .route("/eval/pair", get(eval_pair_next).post(eval_pair_submit))
        .route("/eval/evil", post(eval_evil_submit))
        .route("/admin/register", post(admin_register))
        .route("/admin/export", get(admin_export))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Per-item preference triples from exported pair records, keeping only items with exactly
/// three judgments. Preference A means the system under study won.
pub fn pair_preferences(records: &[StudyRecord]) -> Vec<Vec<Preference>> {
    let mut by_item: BTreeMap<&str, Vec<Preference>> = BTreeMap::new();
    for r in records {
        if let StudyRecord::Pair { item, preferred, .. } = r {
            by_item.entry(item).or_default().push(match preferred {
                System::A => Preference::A,
                System::B => Preference::B,
            });
        }
    }
    by_item.into_values().filter(|v| v.len() == 3).collect()
}

/// Exported e-ViL ratings of one system.
pub fn evil_ratings(records: &[StudyRecord], of: System) -> Vec<EvilRating> {
    records
        .iter()
        .filter_map(|r| match r {
            StudyRecord::Evil { system, rating, .. } if *system == of => Some(*rating),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sides_map_to_both_systems() {
        let item = PairItem {
            id: "x".into(),
            session_id: "s".into(),
            seed: 0,
            left: System::B,
            explanation_a: "a".into(),
            explanation_b: "b".into(),
        };
        assert_eq!(item.system_at(Side::Left), System::B);
        assert_eq!(item.system_at(Side::Right), System::A);
    }

    #[test]
    fn item_seed_is_stable() {
        assert_eq!(item_seed(1, "pair-a"), item_seed(1, "pair-a"));
        assert_ne!(item_seed(1, "pair-a"), item_seed(2, "pair-a"));
    }
}
