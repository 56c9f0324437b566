//! Runs the cue bottleneck on one session with the offline keyword backend: four cues per
//! snippet, then a discriminator that sees only the cues.

use std::sync::Arc;

use truthcue::corpus::parse_corpus;
use truthcue::pipeline::{Pipeline, Variant, VariantConfig};
use truthcue::prompting::ControlKind;
use truthcue::provider::HeuristicProvider;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sessions = parse_corpus(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/sessions.jsonl"))?;
    let session = &sessions[0];
    let pipe = Pipeline::new(Arc::new(HeuristicProvider::default()));

    let p = pipe.run_variant(session, &VariantConfig::new(Variant::Bottleneck, "offline")).await?;
    for a in &p.annotations {
        println!(
            "snippet {} {:<13} {:<15} {:?} / {:?}",
            a.snippet_index,
            a.contestant.to_string(),
            a.control.kind.name(),
            a.control.label,
            a.control.verdict
        );
    }
    println!("ranking {:?}, truth {}, {} calls", p.ranking, session.ground_truth, p.provenance.calls.len());

    // Keep only the entailment cue.
    let only = Variant::bottleneck_with([ControlKind::Entailment].into())?;
    let q = pipe.run_variant(session, &VariantConfig::new(only.clone(), "offline")).await?;
    println!("{}: ranking {:?}, {} calls", only.id(), q.ranking, q.provenance.calls.len());
    Ok(())
}
