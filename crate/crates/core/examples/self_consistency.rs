//! Self-consistency over a backend that disagrees with itself: five sampled answers are
//! combined by majority on the top choice.

use std::sync::Arc;

use truthcue::corpus::parse_corpus;
use truthcue::pipeline::{Pipeline, Variant, VariantConfig};
use truthcue::provider::{Matcher, MockProvider};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sessions = parse_corpus(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/sessions.jsonl"))?;
    let session = &sessions[1];
    let samples = [
        "1. Number Two 2. Number One 3. Number Three\n### Number Two",
        "1. Number One 2. Number Two 3. Number Three\n### Number One",
        "1. Number Two 2. Number Three 3. Number One\n### Number Two",
        "no idea",
        "1. Number Three 2. Number Two 3. Number One\n### Number Three",
    ];
    let mock = Arc::new(
        MockProvider::new().with_entry(Matcher::contains("Conversations:"), samples.iter().map(|s| s.to_string()).collect()),
    );
    let pipe = Pipeline::new(mock.clone());
    let variant = Variant::SelfConsistency { inner: Box::new(Variant::CoT), k: 5 };
    let p = pipe.run_variant(session, &VariantConfig::new(variant, "sampler")).await?;
    println!("samples: {}", samples.len());
    println!("majority ranking {:?} (truth {})", p.ranking, session.ground_truth);
    println!("backend requests {}, recorded calls {}", mock.calls(), p.provenance.calls.len());
    Ok(())
}
