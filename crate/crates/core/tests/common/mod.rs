#![allow(dead_code)]

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use truthcue::corpus::{serialize_corpus, ContestantLabel, Session, Speaker, Utterance};

pub use ContestantLabel::{NumberOne as ONE, NumberThree as THREE, NumberTwo as TWO};

/// Builds a session from `(speaker, text)` turns; `J` marks judge turns and `C` contestant turns.
pub fn session(id: &str, affidavit: &str, turns: &[(char, &str)], truth: ContestantLabel) -> Session {
    Session {
        id: id.to_string(),
        cc_name: "Ruth Kane".to_string(),
        affidavit: affidavit.to_string(),
        utterances: turns
            .iter()
            .enumerate()
            .map(|(index, (who, text))| Utterance {
                index,
                speaker: if *who == 'J' { Speaker::Judge } else { Speaker::Contestant },
                addressed: None,
                text: text.to_string(),
            })
            .collect(),
        ground_truth: truth,
        judge_votes: vec![],
        judge_ids: vec![],
    }
}

pub fn with_votes(mut s: Session, votes: &[ContestantLabel]) -> Session {
    s.judge_votes = votes.to_vec();
    s.judge_ids = (0..votes.len()).map(|i| format!("judge-{i}")).collect();
    s
}

/// A painter of covered bridges in Tennessee. Number Three is the real person; Number One hedges
/// about paint, Number Two is vague about home and overstates a date the affidavit puts in 1934.
pub fn fig1_session() -> Session {
    let s = session(
        "fig1",
        "I, Ruth Kane, paint covered bridges across Tennessee. I was born in 1934 and have restored \
         forty bridges since 1970.",
        &[
            ('J', "Number One, what kind of paint do you use on the bridges?"),
            ('C', "Oh, whatever the county hands out, really."),
            ('J', "And what lasts longest?"),
            ('C', "The kind that lasts, I suppose."),
            ('J', "Number Three, which state are most of your bridges in?"),
            ('C', "Tennessee, mostly along the Cumberland."),
            ('J', "Number Two, where did you grow up?"),
            ('C', "Somewhere around Pennsylvania, or near there."),
            ('J', "When were you born?"),
            ('C', "Exactly on June 3rd, 1931, at noon."),
        ],
        THREE,
    );
    with_votes(s, &[TWO, THREE, ONE, THREE])
}

const TRUTHFUL: &[&str] = &[
    "Tennessee, near the river.",
    "I grew up in Tennessee.",
    "Mostly oak, sometimes pine.",
    "It took about three weeks.",
    "I learned it from my father.",
];
const DECEPTIVE: &[&str] = &[
    "Whatever works on the day.",
    "The kind that people like.",
    "Exactly twelve coats, never eleven.",
    "Somewhere in Pennsylvania, I think.",
    "In 1931, I believe.",
    "I am absolutely certain of it.",
];
const NEUTRAL: &[&str] = &[
    "It depends on the weather.",
    "Usually in the spring.",
    "Mostly by hand.",
];
const QUESTIONS: &[&str] = &[
    "where do you work?",
    "how long does a bridge take?",
    "what wood do you prefer?",
    "who taught you the trade?",
    "when did you start?",
];

/// A random session in which every contestant is addressed at least once. The true person
/// leans on affidavit-consistent answers and the imposters on marker phrases, with noise in both.
pub fn synthetic_session(id: &str, rng: &mut impl Rng) -> Session {
    let truth = *ContestantLabel::ALL.choose(rng).unwrap();
    let mut order: Vec<ContestantLabel> = ContestantLabel::ALL.to_vec();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for _ in 0..rng.random_range(0..3) {
        let extra = *ContestantLabel::ALL.choose(rng).unwrap();
        if order.last() != Some(&extra) {
            order.push(extra);
        }
    }
    let mut turns: Vec<(char, String)> = Vec::new();
    for who in order {
        let n_pairs = rng.random_range(1..=2);
        for p in 0..n_pairs {
            let q = QUESTIONS.choose(rng).unwrap();
            let text = if p == 0 { format!("{who}, {q}") } else { format!("And {q}") };
            turns.push(('J', text));
            let roll: f64 = rng.random();
            let pool = match (who == truth, roll) {
                (true, r) if r < 0.6 => TRUTHFUL,
                (false, r) if r < 0.6 => DECEPTIVE,
                (_, r) if r < 0.85 => NEUTRAL,
                (true, _) => DECEPTIVE,
                (false, _) => TRUTHFUL,
            };
            turns.push(('C', pool.choose(rng).unwrap().to_string()));
        }
    }
    let borrowed: Vec<(char, &str)> = turns.iter().map(|(c, t)| (*c, t.as_str())).collect();
    let votes: Vec<ContestantLabel> = (0..4).map(|_| *ContestantLabel::ALL.choose(rng).unwrap()).collect();
    with_votes(
        session(
            id,
            "I, Ruth Kane, build and restore covered bridges in Tennessee. I was born in 1934.",
            &borrowed,
            truth,
        ),
        &votes,
    )
}

pub fn write_corpus(path: &Path, sessions: &[Session]) {
    std::fs::write(path, serialize_corpus(sessions)).unwrap();
}

/// Every file under `dir` (relative path, bytes), sorted, for byte-level directory comparison.
pub fn snapshot_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}

/// A prediction carrying only a ranking (or none, for an unreadable output).
pub fn prediction(session_id: &str, ranking: Option<[ContestantLabel; 3]>) -> truthcue::pipeline::Prediction {
    truthcue::pipeline::Prediction {
        session_id: session_id.to_string(),
        variant: truthcue::pipeline::Variant::Base,
        ranking,
        top1: ranking.map(|r| r[0]),
        explanation: String::new(),
        annotations: vec![],
        invalid_output: ranking.is_none().then(|| "unreadable".to_string()),
        provenance: truthcue::pipeline::Provenance {
            model_id: "fixture".into(),
            g_model_id: None,
            template_version: truthcue::prompting::TEMPLATE_VERSION.into(),
            shots: 0,
            calls: vec![],
        },
    }
}

/// A ranking that puts `truth` at position `rank` (1-based), the rest in label order.
pub fn ranking_with(truth: ContestantLabel, rank: usize) -> [ContestantLabel; 3] {
    let mut rest: Vec<ContestantLabel> = ContestantLabel::ALL.into_iter().filter(|l| *l != truth).collect();
    rest.insert(rank - 1, truth);
    [rest[0], rest[1], rest[2]]
}
