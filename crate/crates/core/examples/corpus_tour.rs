//! Loads the sample corpus, prints its statistics and walks one session snippet by snippet.
//!
//! `cargo run --example corpus_tour [path/to/sessions.jsonl]`

use truthcue::corpus::{corpus_stats, parse_corpus, segment_snippets};
use truthcue::evaluation::human_session_accuracy;
use truthcue::runner::validate_corpus;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/sessions.jsonl").into());
    let sessions = parse_corpus(&path)?;
    let stats = corpus_stats(&sessions);
    println!(
        "{} sessions, {} utterances, {} words",
        stats.n_sessions, stats.n_utterances, stats.n_words
    );
    let human = human_session_accuracy(&sessions)?;
    println!("judges found the true contestant {:.1}% of the time", human.accuracy * 100.0);

    let first = &sessions[0];
    println!("\n{} ({}): {}", first.id, first.cc_name, first.affidavit);
    for (i, snippet) in segment_snippets(first)?.iter().enumerate() {
        println!("  snippet {i} -> {} (utterances {}..={})", snippet.contestant, snippet.span.0, snippet.span.1);
        for pair in &snippet.qa_pairs {
            println!("    Q: {}", pair.question.text);
            for a in &pair.answers {
                println!("    A: {}", a.text);
            }
        }
    }

    // The lenient validator reports problems instead of stopping at the first one.
    let report = validate_corpus(&path)?;
    println!("\nvalidation warnings: {}", report.warnings.len());
    Ok(())
}
