//! Prints the task, chain-of-thought and cue-extraction prompts for one session.

use truthcue::corpus::{parse_corpus, segment_snippets};
use truthcue::prompting::{
    append_cot, build_bottleneck_prompt, build_task_prompt, system_prompt, ControlKind, DerivationMode,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sessions = parse_corpus(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/sessions.jsonl"))?;
    let session = &sessions[1];

    println!("=== system\n{}\n", system_prompt());
    let task = build_task_prompt(session, 0, &[])?;
    println!("=== task (zero-shot)\n{}\n", task.user);
    let cot = append_cot(task)?;
    println!("=== chain of thought tail\n{}\n", cot.user.lines().last().unwrap_or_default());

    let snippets = segment_snippets(session)?;
    let last = snippets.len() - 1;
    for mode in [DerivationMode::Sequential, DerivationMode::Independent] {
        let cue = build_bottleneck_prompt(ControlKind::Overconfidence, &snippets, last, mode, &session.affidavit)?;
        println!("=== overconfidence cue, snippet {last}, {mode:?}\n{}\n", cue.user);
    }
    Ok(())
}
