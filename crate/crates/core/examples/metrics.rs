//! Scores predictions and computes the agreement and association statistics used in analysis.

use std::sync::Arc;

use truthcue::corpus::parse_corpus;
use truthcue::evaluation::{
    cue_human_regression, cue_rows, fleiss_kappa, human_session_accuracy, render_table, skewness, truths_of,
    EvalReport, RatingMatrix,
};
use truthcue::pipeline::{Pipeline, Variant, VariantConfig};
use truthcue::provider::HeuristicProvider;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sessions = parse_corpus(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/sessions.jsonl"))?;
    let truths = truths_of(&sessions);
    let pipe = Pipeline::new(Arc::new(HeuristicProvider::default()));

    let mut reports = Vec::new();
    let mut bottleneck = Vec::new();
    for variant in [Variant::Base, Variant::Bottleneck] {
        let cfg = VariantConfig::new(variant.clone(), "offline");
        let mut preds = Vec::new();
        for s in &sessions {
            preds.push(pipe.run_variant(s, &cfg).await?);
        }
        reports.push(EvalReport::from_predictions(cfg.cell_id(), &preds, &truths)?);
        if variant == Variant::Bottleneck {
            bottleneck = preds;
        }
    }
    print!("{}", render_table(&reports));

    let human = human_session_accuracy(&sessions)?;
    println!("\njudge accuracy {:.1}%", human.accuracy * 100.0);
    let votes: Vec<_> = sessions.iter().map(|s| s.judge_votes.clone()).collect();
    println!("fleiss kappa over votes {:.3}", fleiss_kappa(&RatingMatrix::from_ratings(&votes)?));
    let deceived: Vec<f64> = sessions
        .iter()
        .map(|s| s.judge_votes.iter().filter(|v| **v != s.ground_truth).count() as f64)
        .collect();
    println!("skewness of deceived-judge counts {:.3}", skewness(&deceived)?);

    // Too few sessions for inference; shown for the shape of the output.
    match cue_human_regression(&cue_rows(&bottleneck, &sessions)) {
        Ok(reg) => {
            for t in &reg.fit.terms {
                println!("  {:<15} coef {:>7.3}  p {:?}", t.name, t.coefficient, t.p);
            }
        }
        Err(e) => println!("cue regression: {e}"),
    }
    Ok(())
}
