//! Runs the compiled example binaries (cargo test builds them alongside the tests) and checks
//! the lines each one exists to show.

use std::path::PathBuf;
use std::process::Command;

fn example(name: &str, args: &[&str]) -> String {
    let exe = std::env::current_exe().unwrap();
    let dir = exe.parent().and_then(|deps| deps.parent()).unwrap().join("examples");
    let path: PathBuf = dir.join(format!("{name}{}", std::env::consts::EXE_SUFFIX));
    assert!(path.exists(), "{} not built; run through `cargo test`", path.display());
    let out = Command::new(&path).args(args).output().unwrap();
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "{name} failed:\n{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    stdout
}

#[test]
fn corpus_tour() {
    let out = example("corpus_tour", &[]);
    assert!(out.starts_with("7 sessions, 50 utterances, 453 words"));
    assert!(out.contains("snippet 2 -> Number Two (utterances 6..=9)"));
    assert!(out.contains("validation warnings: 0"));
}

#[test]
fn anonymize_sessions() {
    let out = example("anonymize_sessions", &[]);
    assert!(out.contains("cc name: Ruth Kane -> Participant_"));
    assert!(!out.contains("I, Ruth Kane"));
    assert!(out.contains("ground truth: Number Three -> Number Two"));
}

#[test]
fn render_prompts() {
    let out = example("render_prompts", &[]);
    assert!(out.contains("Name: Mara Quill"));
    assert!(out.contains("Let's think step by step."));
    assert!(out.contains("snippet 3, Sequential") && out.contains("snippet 3, Independent"));
}

#[test]
fn parse_answers() {
    let out = example("parse_answers", &[]);
    assert_eq!(out.lines().filter(|l| l.starts_with("ok ")).count(), 2);
    assert_eq!(out.lines().filter(|l| l.starts_with("err ")).count(), 2);
    assert!(out.contains("Overconfident / LikelyImposter"));
    assert!(out.contains("unreadable"));
}

#[test]
fn provider_cache() {
    let out = example("provider_cache", &[]);
    assert!(out.contains("second: cache_hit=true"));
    assert!(out.contains("backend calls: 1\n"));
    assert!(out.contains("backend calls after a sampled request: 2"));
}

#[test]
fn bottleneck_pipeline() {
    let out = example("bottleneck_pipeline", &[]);
    assert_eq!(out.lines().filter(|l| l.starts_with("snippet ")).count(), 12);
    assert!(out.contains("ranking Some([NumberThree, NumberOne, NumberTwo]), truth Number Three, 13 calls"));
    assert!(out.contains("bottleneck-only-entailment: ranking Some([NumberThree, NumberOne, NumberTwo]), 4 calls"));
}

#[test]
fn self_consistency() {
    let out = example("self_consistency", &[]);
    assert!(out.contains("majority ranking Some([NumberTwo, NumberOne, NumberThree])"));
}

#[test]
fn metrics() {
    let out = example("metrics", &[]);
    assert!(out.contains("| bottleneck__offline |"));
    assert!(out.contains("judge accuracy 50.0%"));
    assert!(out.contains("fleiss kappa over votes"));
}

#[test]
fn run_experiment_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/experiment.toml");
    let first = example("run_experiment", &[config, out_dir.to_str().unwrap()]);
    assert_eq!(first.lines().filter(|l| l.contains("executed  5  resumed  0")).count(), 7);
    assert!(first.contains("| sc3-bottleneck__offline |"));
    let second = example("run_experiment", &[config, out_dir.to_str().unwrap()]);
    assert_eq!(second.lines().filter(|l| l.contains("executed  0  resumed  5")).count(), 7);
}

#[test]
fn run_experiment_with_scripted_mock() {
    let dir = tempfile::tempdir().unwrap();
    let config = concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/experiment_mock.toml");
    let out = example("run_experiment", &[config, dir.path().join("run").to_str().unwrap()]);
    assert!(out.contains("| base__scripted | 42.9 | 57.1 | 42.9 | 7 |"), "{out}");
}

#[test]
fn study_server() {
    let out = example("study_server", &[]);
    assert_eq!(out.lines().filter(|l| l.ends_with("vote recorded=true")).count(), 3);
    assert!(out.contains("no assistance"));
    assert!(out.contains("annotations=16"));
}
