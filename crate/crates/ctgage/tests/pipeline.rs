//! End-to-end subcommand tests: simulate determinism, training smoke run
//! with resume, predict/evaluate/analyze/attend contracts, exit codes.

use std::path::Path;

use ctgage::cli::{self, main_with_args};
use ctgage::data;

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn simulate_is_deterministic_and_parallel_matches_serial() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for out in [&a, &b] {
        cli::cmd_simulate(None, out, Some(5), Some(40), false).unwrap();
    }
    cli::cmd_simulate(None, &c, Some(5), Some(40), true).unwrap();
    let bytes = read(&a.join("cohort.jsonl"));
    assert!(!bytes.is_empty());
    assert_eq!(bytes, read(&b.join("cohort.jsonl")), "two serial runs differ");
    assert_eq!(bytes, read(&c.join("cohort.jsonl")), "parallel differs from serial");
    assert_eq!(read(&a.join("oracle.csv")), read(&c.join("oracle.csv")));
    assert!(a.join("manifest.json").exists());
}

#[test]
fn simulate_zero_subjects_is_ok() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let code = main_with_args([
        "ctgage",
        "simulate",
        "--out",
        out.to_str().unwrap(),
        "--n-subjects",
        "0",
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(out.join("cohort.jsonl")).unwrap();
    assert!(text.trim().is_empty());
}

#[test]
fn missing_required_flag_is_usage_error() {
    assert_eq!(main_with_args(["ctgage", "simulate"]), 2);
    assert_eq!(main_with_args(["ctgage", "train", "--out", "/tmp/x"]), 2);
    assert_eq!(main_with_args(["ctgage", "no-such-command"]), 2);
}

#[test]
fn nonexistent_cohort_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let code = main_with_args([
        "ctgage",
        "train",
        "--cohort",
        "/definitely/not/here.jsonl",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
}

fn smoke_config(dir: &Path, max_epochs: usize) -> std::path::PathBuf {
    let p = dir.join(format!("config_{max_epochs}.txt"));
    std::fs::write(
        &p,
        format!(
            "model.preset=small\ntrain.max_epochs={max_epochs}\ntrain.batch_size=32\ntrain.seed=7\n"
        ),
    )
    .unwrap();
    p
}

/// One shared smoke run exercising train -> resume -> predict ->
/// evaluate -> attend, so the network is only trained once.
#[test]
fn train_smoke_resume_predict_evaluate_attend() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    cli::cmd_simulate(None, &sim, Some(3), Some(200), false).unwrap();
    let cohort_path = sim.join("cohort.jsonl");

    // smoke train: 2 epochs
    let out = dir.path().join("run");
    let cfg2 = smoke_config(dir.path(), 2);
    let outcome = cli::cmd_train(&cohort_path, Some(&cfg2), &out, None, None).unwrap();
    assert!(out.join("best.ckpt").exists());
    assert!(out.join("last.ckpt").exists());
    assert!(out.join("split.csv").exists());
    assert_eq!(outcome.history.epochs.len(), 2);
    assert_eq!(outcome.history.epochs[0].lr, 1e-3);

    // resume continues epoch numbering
    let cfg1 = smoke_config(dir.path(), 1);
    let resumed = cli::cmd_train(
        &cohort_path,
        Some(&cfg1),
        &out,
        None,
        Some(&out.join("last.ckpt")),
    )
    .unwrap();
    assert_eq!(resumed.history.epochs[0].epoch, 2);
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    let rows: Vec<&str> = history.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[2].starts_with("2,"));

    // predict: one row per screened record
    let pred_dir = dir.path().join("pred");
    cli::cmd_predict(&cohort_path, &out.join("best.ckpt"), &pred_dir).unwrap();
    let (cohort, _) = data::load_cohort(&cohort_path).unwrap();
    let screened = cohort.records.iter().filter(|r| data::screen(r)).count();
    let pred_text = std::fs::read_to_string(pred_dir.join("predictions.csv")).unwrap();
    assert_eq!(pred_text.lines().count() - 1, screened);

    // evaluate: metrics JSON parses and is finite
    let eval_dir = dir.path().join("eval");
    cli::cmd_evaluate(&cohort_path, &out.join("best.ckpt"), &eval_dir).unwrap();
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("metrics.json")).unwrap())
            .unwrap();
    assert!(metrics["mae"].as_f64().unwrap().is_finite());
    assert!(metrics["mse"].as_f64().unwrap() >= 0.0);

    // analyze on the real predictions: output tables have the documented shape
    let an_dir = dir.path().join("analyze");
    cli::cmd_analyze(&pred_dir.join("predictions.csv"), &cohort_path, &an_dir, None).unwrap();
    let table = std::fs::read_to_string(an_dir.join("outcome_incidence.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 1 + 6, "6 outcome rows");
    assert_eq!(lines[0].split(',').count(), 1 + 5 + 2, "5 bands + 2 p columns");
    let maternal = std::fs::read_to_string(an_dir.join("maternal_incidence.csv")).unwrap();
    assert_eq!(maternal.lines().count(), 1 + 5, "5 maternal rows");

    // attend on a single record: exactly one CSV, plus one SVG with --svg
    let one_id = cohort
        .records
        .iter()
        .find(|r| data::screen(r))
        .unwrap()
        .record_id
        .clone();
    let att_dir = dir.path().join("attend");
    cli::cmd_attend(&cohort_path, &out.join("best.ckpt"), &att_dir, true, Some(&one_id)).unwrap();
    let mut csvs = 0;
    let mut svgs = 0;
    for e in std::fs::read_dir(&att_dir).unwrap() {
        let name = e.unwrap().file_name().into_string().unwrap();
        if name.starts_with("attention_") && name.ends_with(".csv") {
            csvs += 1;
        }
        if name.ends_with(".svg") {
            svgs += 1;
        }
    }
    assert_eq!((csvs, svgs), (1, 1));
}

#[test]
fn perfect_predictions_all_land_in_center_band() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    cli::cmd_simulate(None, &sim, Some(9), Some(30), false).unwrap();
    let (cohort, _) = data::load_cohort(&sim.join("cohort.jsonl")).unwrap();

    // hand-written predictions equal to actual ages
    let pred_path = dir.path().join("perfect.csv");
    let mut text = String::from("record_id,ai_age,gap\n");
    for r in &cohort.records {
        text.push_str(&format!("{},{},0\n", r.record_id, r.actual_age_days));
    }
    std::fs::write(&pred_path, text).unwrap();

    let an_dir = dir.path().join("analyze");
    cli::cmd_analyze(&pred_path, &sim.join("cohort.jsonl"), &an_dir, None).unwrap();
    let table = std::fs::read_to_string(an_dir.join("outcome_incidence.csv")).unwrap();
    // every record in the central band: other band cells all start "0 ("
    for line in table.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        for idx in [1, 2, 4, 5] {
            assert!(cells[idx].starts_with("0 ("), "non-center band populated: {line}");
        }
    }
}

#[test]
fn serial_train_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    cli::cmd_simulate(None, &sim, Some(21), Some(60), false).unwrap();
    let cohort_path = sim.join("cohort.jsonl");
    let cfg = smoke_config(dir.path(), 1);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cli::cmd_train(&cohort_path, Some(&cfg), &a, None, None).unwrap();
    cli::cmd_train(&cohort_path, Some(&cfg), &b, None, None).unwrap();
    assert_eq!(read(&a.join("best.ckpt")), read(&b.join("best.ckpt")));
    assert_eq!(read(&a.join("history.csv")), read(&b.join("history.csv")));
}
