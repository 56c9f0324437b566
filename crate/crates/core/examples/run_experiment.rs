//! Runs an experiment config end to end and prints the result table. Rerunning resumes from
//! the predictions on disk and makes no backend calls.
//!
//! `cargo run --example run_experiment [config.toml] [output_dir]`

use truthcue::runner::{run_experiment, ExperimentConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/experiment.toml").into());
    let mut config = ExperimentConfig::load(&path)?;
    if let Some(out) = args.next() {
        config.output_dir = out.into();
    }
    let summary = run_experiment(&config).await?;
    for cell in &summary.cells {
        println!("{:<40} executed {:>2}  resumed {:>2}", cell.cell_id, cell.executed, cell.resumed);
    }
    println!("\n{}", std::fs::read_to_string(&summary.table)?);
    println!("outputs in {}", summary.run_dir.display());
    Ok(())
}
