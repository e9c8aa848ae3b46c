use std::path::Path;
use std::process::{Command, Output};

use siddm_core::eval::{mog_sample, read_samples_csv, write_samples_csv, MogSpec};
use siddm_core::rng::LabRng;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siddm-lab")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn verify_theorem_with_zero_trials() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["verify-theorem", "--trials", "0", "--out-dir", p(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("trials 0 violations 0"), "{}", stdout(&o));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("theorem_reports.json")).unwrap()).unwrap();
    assert_eq!(json, serde_json::json!([]));
}

#[test]
fn verify_theorem_reports_every_trial() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["verify-theorem", "--trials", "50", "--max-support", "4", "--out-dir", p(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("trials 50 violations 0"), "{}", stdout(&o));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("theorem_reports.json")).unwrap()).unwrap();
    let reports = json.as_array().unwrap();
    assert_eq!(reports.len(), 50);
    assert!(reports.iter().all(|r| r["nx"].as_u64().unwrap() <= 4 && r["ny"].as_u64().unwrap() <= 4));
}

#[test]
fn untrained_single_step_checkpoint_samples_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = lab(&["train", "--desk", "--steps", "1", "--iters", "0", "--out-dir", p(&run)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("s.csv");
    let o = lab(&["sample", "--checkpoint", p(&run.join("checkpoint.json")), "--n", "64", "--steps", "1", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = read_samples_csv(&out).unwrap();
    assert_eq!(s.shape(), &[64, 2]);
    assert!(s.data().iter().all(|&v| v == 0.0));
}

#[test]
fn sample_rejects_mismatched_steps() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["train", "--desk", "--steps", "2", "--iters", "0", "--out-dir", p(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = lab(&["sample", "--checkpoint", p(&dir.path().join("checkpoint.json")), "--steps", "4", "--out", p(&dir.path().join("s.csv"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--steps 4"), "{}", stderr(&o));
}

#[test]
fn eval_of_mixture_draws_covers_every_mode() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("real.csv");
    let x = mog_sample(&MogSpec::default(), 10_000, &mut LabRng::seed_from_u64(9)).unwrap();
    write_samples_csv(&path, &x).unwrap();
    let o = lab(&["eval", "--samples", p(&path)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["modes_covered"], 25);
    assert!(report["hq_fraction"].as_f64().unwrap() > 0.98);
}

#[test]
fn missing_input_is_a_runtime_error_naming_the_path() {
    let o = lab(&["eval", "--samples", "/nonexistent/samples.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/samples.csv"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(lab(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(lab(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(lab(&["train", "--objective", "vanilla_gan", "--steps", "4", "--iters", "0"]).status.code(), Some(1));
    assert_eq!(lab(&["verify-theorem", "--max-support", "0"]).status.code(), Some(1));
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["train", "sample", "eval", "sweep", "verify-theorem", "plot"] {
        let o = lab(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
}

#[test]
fn identical_invocations_write_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    let run = dir.path().join("run");
    for name in ["a", "b"] {
        let o = lab(&["train", "--desk", "--steps", "2", "--iters", "30", "--batch", "32", "--seed", "5", "--out-dir", p(&run)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let ck = std::fs::read(run.join("checkpoint.json")).unwrap();
        let log = std::fs::read(run.join("run_log.csv")).unwrap();
        let samples = dir.path().join(format!("{name}.csv"));
        let o = lab(&["sample", "--checkpoint", p(&run.join("checkpoint.json")), "--n", "100", "--seed", "3", "--out", p(&samples)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outputs.push((ck, log, std::fs::read(samples).unwrap()));
    }
    assert!(outputs[0] == outputs[1]);
}

#[test]
fn sweep_writes_one_column_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&[
        "sweep", "--desk", "--axis", "lambda_afd", "--values", "0,inf", "--iters", "10", "--batch", "32", "--out-dir", p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "lambda_afd,0,inf");
    assert_eq!(lines.len(), 5);
    assert!(dir.path().join("lambda_afd_inf").join("checkpoint.json").exists());
}

#[test]
fn plot_writes_svg() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("real.csv");
    let x = mog_sample(&MogSpec::default(), 500, &mut LabRng::seed_from_u64(1)).unwrap();
    write_samples_csv(&path, &x).unwrap();
    let svg = dir.path().join("real.svg");
    let o = lab(&["plot", "--samples", p(&path), "--out", p(&svg), "--title", "real"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(svg).unwrap();
    assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
    assert_eq!(text.matches("<path").count(), 25);
}
