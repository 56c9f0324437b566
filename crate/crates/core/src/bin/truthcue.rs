use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::json;
use truthcue::corpus::{corpus_stats, parse_corpus};
use truthcue::evaluation::human_session_accuracy;
use truthcue::runner::{emit_report, read_predictions, run_experiment, validate_corpus, ExperimentConfig};
use truthcue::study::{serve, AppState, StudyData};

#[derive(Parser)]
#[command(name = "truthcue", version, about = "Cue-bottleneck deception detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment config (TOML).
    Run { config: PathBuf },
    /// Check a corpus file and list warnings.
    Validate {
        corpus: PathBuf,
        /// Exit with status 3 when there are warnings.
        #[arg(long)]
        strict: bool,
    },
    /// Rebuild table.md for a run directory and print it.
    Report { run_dir: PathBuf },
    /// Serve the human-study API.
    Serve {
        #[arg(long)]
        corpus: PathBuf,
        /// Predictions shown under the assisted conditions.
        #[arg(long)]
        predictions: PathBuf,
        /// Predictions of the system under study for pairwise items.
        #[arg(long, requires = "compare_b")]
        compare_a: Option<PathBuf>,
        /// Predictions of the baseline for pairwise items.
        #[arg(long, requires = "compare_a")]
        compare_b: Option<PathBuf>,
        #[arg(long, default_value = "study-events.jsonl")]
        log: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Environment variable holding the admin bearer token.
        #[arg(long, default_value = "TRUTHCUE_ADMIN_TOKEN")]
        admin_token_env: String,
    },
    /// Print corpus statistics and the judges' session-level accuracy.
    Stats { corpus: PathBuf },
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run { config } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(e.exit_code() as u8, e),
            };
            match run_experiment(&cfg).await {
                Ok(summary) => {
                    for cell in &summary.cells {
                        eprintln!("{}: {} run, {} resumed", cell.cell_id, cell.executed, cell.resumed);
                    }
                    print!("{}", std::fs::read_to_string(&summary.table).unwrap_or_default());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e.exit_code() as u8, e),
            }
        }
        Command::Validate { corpus, strict } => match validate_corpus(&corpus) {
            Ok(report) => {
                for w in &report.warnings {
                    eprintln!("warning: {w}");
                }
                println!("{}", serde_json::to_string_pretty(&report.stats).unwrap());
                if strict && !report.warnings.is_empty() {
                    ExitCode::from(3)
                } else {
                    ExitCode::SUCCESS
                }
            }
            Err(e) => fail(e.exit_code() as u8, e),
        },
        Command::Report { run_dir } => match emit_report(&run_dir) {
            Ok(path) => {
                print!("{}", std::fs::read_to_string(path).unwrap_or_default());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e.exit_code() as u8, e),
        },
        Command::Stats { corpus } => match parse_corpus(&corpus) {
            Ok(sessions) => {
                let human = human_session_accuracy(&sessions).ok();
                let out = json!({ "corpus": corpus_stats(&sessions), "human_accuracy": human });
                println!("{}", serde_json::to_string_pretty(&out).unwrap());
                ExitCode::SUCCESS
            }
            Err(e) => fail(1, e),
        },
        Command::Serve { corpus, predictions, compare_a, compare_b, log, bind, seed, admin_token_env } => {
            let loaded = (|| {
                let sessions = parse_corpus(&corpus).map_err(|e| e.to_string())?;
                let cues = read_predictions(&predictions).map_err(|e| e.to_string())?;
                let compare = match (compare_a, compare_b) {
                    (Some(a), Some(b)) => Some((
                        read_predictions(&a).map_err(|e| e.to_string())?,
                        read_predictions(&b).map_err(|e| e.to_string())?,
                    )),
                    _ => None,
                };
                StudyData::new(sessions, cues, compare, seed).map_err(|e| e.to_string())
            })();
            let data = match loaded {
                Ok(d) => d,
                Err(e) => return fail(1, e),
            };
            let token = std::env::var(&admin_token_env).ok();
            if token.is_none() {
                eprintln!("warning: {admin_token_env} is unset; admin routes will reject every request");
            }
            let state = match AppState::open(data, &log, token) {
                Ok(s) => Arc::new(s),
                Err(e) => return fail(1, format!("{}: {e}", log.display())),
            };
            let listener = match tokio::net::TcpListener::bind(bind).await {
                Ok(l) => l,
                Err(e) => return fail(2, format!("bind {bind}: {e}")),
            };
            eprintln!("serving on http://{bind}");
            match serve(listener, state).await {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(2, e),
            }
        }
    }
}
