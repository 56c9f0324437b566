//! Starts the study server on an ephemeral port and plays one judge through a session:
//! register, open, reveal every snippet, read the cues and vote.

use std::sync::Arc;

use serde_json::{json, Value};
use truthcue::corpus::parse_corpus;
use truthcue::pipeline::{Pipeline, Variant, VariantConfig};
use truthcue::provider::HeuristicProvider;
use truthcue::study::{router, AppState, StudyData};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sessions = parse_corpus(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/sessions.jsonl"))?;
    let pipe = Pipeline::new(Arc::new(HeuristicProvider::default()));
    let mut cues = Vec::new();
    for s in &sessions {
        cues.push(pipe.run_variant(s, &VariantConfig::new(Variant::Bottleneck, "offline")).await?);
    }

    let dir = tempfile::tempdir()?;
    let token = "example-token";
    let data = StudyData::new(sessions, cues, None, 0)?;
    let state = Arc::new(AppState::open(data, dir.path().join("events.jsonl"), Some(token.into()))?);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    tokio::spawn(async move { axum::serve(listener, router(state)).await });

    let http = reqwest::Client::new();
    let assignment: Value = http
        .post(format!("{base}/admin/register"))
        .bearer_auth(token)
        .json(&json!({ "participant": "p1" }))
        .send()
        .await?
        .json()
        .await?;
    println!("assignment: {}", assignment["sessions"]);

    // The first three sessions cover every condition once; walk them all.
    for _ in 0..3 {
        let view: Value = http.get(format!("{base}/study/next?participant=p1")).send().await?.json().await?;
        let session = view["session"].as_str().unwrap_or_default().to_string();
        let n = view["n_snippets"].as_u64().unwrap_or(1);
        for upto in 1..n {
            http.post(format!("{base}/study/reveal"))
                .json(&json!({ "participant": "p1", "session": session, "upto": upto }))
                .send()
                .await?
                .error_for_status()?;
        }
        let cues = http
            .get(format!("{base}/study/cues?participant=p1&session={session}"))
            .send()
            .await?;
        let shown = if cues.status().is_success() {
            let v: Value = cues.json().await?;
            format!("top1={} annotations={}", v["top1"], v["annotations"].as_array().map_or(0, Vec::len))
        } else {
            "no assistance".to_string()
        };
        let vote: Value = http
            .post(format!("{base}/study/vote"))
            .json(&json!({ "participant": "p1", "session": session, "vote": "Number One" }))
            .send()
            .await?
            .json()
            .await?;
        println!("{session:<18} {n} snippets, {shown}, vote recorded={}", vote["recorded"]);
    }

    let export = http.get(format!("{base}/admin/export")).bearer_auth(token).send().await?.text().await?;
    println!("exported {} events", export.lines().count());
    Ok(())
}
