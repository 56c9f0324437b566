//! How model completions are read: rankings, `###` answers and cue verdicts, including the
//! failure cases that count as invalid outputs.

use truthcue::prompting::{interpret_ranked_answer, parse_control_verdict, ControlKind};

fn main() {
    let completions = [
        "Number Two repeats the affidavit.\n1. Number Two 2. Number Three 3. Number One\n### Number Two",
        "1. Number One 2. Number Two 3. Number Three",
        "Ranking: 1. Number Three 2. Number One 3. Number Two\n### Number One",
        "I think it is Number Two.",
    ];
    for c in completions {
        match interpret_ranked_answer(c) {
            Ok(a) => println!("ok   {:?}  explanation={:?}", a.ranking, a.explanation),
            Err(e) => println!("err  {e}"),
        }
    }

    let verdicts = [
        (ControlKind::Overconfidence, "They give an exact time of birth.\nLabel: overconfident\nVerdict: likely imposter"),
        (ControlKind::Entailment, "Consistent with the affidavit.\nLabel: entail\nVerdict: likely the true person"),
        (ControlKind::Ambiguity, "No label here."),
    ];
    for (kind, text) in verdicts {
        match parse_control_verdict(text, kind) {
            Ok(v) => println!("{:<16} {:?} / {:?}", kind.name(), v.label, v.verdict),
            Err(e) => println!("{:<16} unreadable: {e}", kind.name()),
        }
    }
}
