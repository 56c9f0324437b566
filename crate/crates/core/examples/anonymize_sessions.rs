//! Replaces the CC's name with a placeholder and relabels contestants under a permutation.
//! Ground truth and votes move with the labels, so accuracy is unchanged.

use truthcue::corpus::{anonymize, parse_corpus, ContestantLabel, LabelPermutation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sessions = parse_corpus(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/sessions.jsonl"))?;
    let original = &sessions[0];
    // One -> Three, Two -> One, Three -> Two.
    let perm = LabelPermutation::new([ContestantLabel::NumberThree, ContestantLabel::NumberOne, ContestantLabel::NumberTwo])?;
    let renamed = anonymize(original, &perm, 42, &[]);

    println!("cc name: {} -> {}", original.cc_name, renamed.cc_name);
    println!("affidavit: {}", renamed.affidavit);
    for (before, after) in original.utterances.iter().zip(&renamed.utterances).take(6) {
        println!("  {:<60} | {}", before.text, after.text);
    }
    println!("ground truth: {} -> {}", original.ground_truth, renamed.ground_truth);
    println!("votes: {:?} -> {:?}", original.judge_votes, renamed.judge_votes);

    // Applying the inverse restores every label.
    let back = anonymize(&renamed, &perm.inverse(), 42, &[]);
    assert_eq!(back.ground_truth, original.ground_truth);
    assert_eq!(back.judge_votes, original.judge_votes);
    Ok(())
}
