//! Command-line pipeline: simulate -> train -> predict -> evaluate ->
//! analyze -> attend. One binary, shared config and formats across
//! stages; exit codes 0 (success), 1 (runtime error), 2 (usage error).

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{write_manifest, RunConfig};
use crate::data::{self, Cohort, CtgRecord, MaternalFlags, OutcomeFlags, Split};
use crate::error::{Error, Result};
use crate::interpret;
use crate::loss;
use crate::net1d::{Model, INPUT_LEN};
use crate::stats::{self, GapRecord};
use crate::synth;
use crate::tensor::Tensor;
use crate::train::{self, TrainOutcome};

#[derive(Parser, Debug)]
#[command(name = "ctgage", version, about = "Gestational-age regression from CTG traces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic cohort plus its planted-gap oracle CSV.
    Simulate {
        /// Flat key=value spec file (synth.* keys); defaults when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_subjects: Option<usize>,
        /// Generate subjects in parallel (same bytes as serial).
        #[arg(long)]
        parallel: bool,
    },
    /// Screen, split, augment, and train; writes checkpoints and history.
    Train {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint; epoch numbering resumes after the
        /// existing history rows in --out.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write record_id,ai_age,gap for every screened record.
    Predict {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write MAE/MSE/Pearson metrics JSON over screened records.
    Evaluate {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gap stratification tables, pairwise tests, risk curves, heatmaps.
    Analyze {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        bin_width: Option<f64>,
    },
    /// Per-record attention weights as CSV (and SVG with --svg).
    Attend {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: bool,
        /// Restrict to one record id.
        #[arg(long)]
        record: Option<String>,
    },
}

/// Cap the rayon worker count from CTGAGE_THREADS if set. Safe to call
/// more than once; later calls are no-ops.
pub fn init_threads() {
    if let Ok(v) = std::env::var("CTGAGE_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

/// Parse argv and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap uses 0 for --help/--version and 2 for usage errors
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            spec,
            out,
            seed,
            n_subjects,
            parallel,
        } => cmd_simulate(spec.as_deref(), &out, seed, n_subjects, parallel),
        Command::Train {
            cohort,
            config,
            out,
            seed,
            resume,
        } => cmd_train(&cohort, config.as_deref(), &out, seed, resume.as_deref()).map(|_| ()),
        Command::Predict { cohort, model, out } => cmd_predict(&cohort, &model, &out),
        Command::Evaluate { cohort, model, out } => cmd_evaluate(&cohort, &model, &out),
        Command::Analyze {
            predictions,
            cohort,
            out,
            bin_width,
        } => cmd_analyze(&predictions, &cohort, &out, bin_width),
        Command::Attend {
            cohort,
            model,
            out,
            svg,
            record,
        } => cmd_attend(&cohort, &model, &out, svg, record.as_deref()),
    }
}

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_config_echo(out: &Path, cfg: &RunConfig) -> Result<()> {
    let p = out.join("effective_config.txt");
    std::fs::write(&p, cfg.echo()).map_err(|e| Error::io(p.display().to_string(), e))
}

pub fn cmd_simulate(
    spec: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    n_subjects: Option<usize>,
    parallel: bool,
) -> Result<()> {
    let mut cfg = load_config(spec)?;
    if let Some(s) = seed {
        cfg.synth.seed = s;
    }
    if let Some(n) = n_subjects {
        cfg.synth.n_subjects = n;
    }
    cfg.validate()?;
    ensure_dir(out)?;
    let (cohort, oracle) = synth::generate_cohort(&cfg.synth, parallel)?;
    data::write_cohort(&cohort, out.join("cohort.jsonl"))?;
    synth::write_oracle_csv(&oracle, out.join("oracle.csv"))?;
    write_config_echo(out, &cfg)?;
    let inputs: Vec<&Path> = spec.into_iter().collect();
    write_manifest(out, &inputs, &cfg.echo())?;
    Ok(())
}

/// Count history rows already in an output directory, for --resume.
fn existing_history_epochs(out: &Path) -> usize {
    std::fs::read_to_string(out.join("history.csv"))
        .map(|t| t.lines().skip(1).filter(|l| !l.trim().is_empty()).count())
        .unwrap_or(0)
}

pub fn cmd_train(
    cohort_path: &Path,
    config_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut cfg = load_config(config_path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if cfg.augment.window_len != INPUT_LEN {
        return Err(Error::Config(format!(
            "augment.window_len must equal the model input length {INPUT_LEN}"
        )));
    }
    ensure_dir(out)?;
    let (mut cohort, report) = data::load_cohort(cohort_path)?;
    eprintln!(
        "loaded {} records ({} clamped values, {} rejected lines)",
        report.loaded, report.clamped_values, report.rejected_lines
    );
    data::split_cohort(&mut cohort, cfg.train.seed, cfg.split_ratios)?;
    data::write_split_csv(&cohort, out.join("split.csv"))?;

    let train_records = cohort.records_in(Split::Train);
    let val_records = cohort.records_in(Split::Val);
    let segments = train::build_training_set(&train_records, &cfg.augment, cfg.train.seed)?;
    let labels: Vec<f64> = segments.iter().map(|s| s.label_days).collect();
    let prior = loss::build_prior(&labels, cfg.prior_step, cfg.prior_epsilon)?;
    prior.write_csv(out.join("prior.csv"))?;

    let (model, start_epoch) = match resume {
        Some(ckpt) => (Model::load(ckpt)?, existing_history_epochs(out)),
        None => (Model::build(cfg.model.clone(), cfg.train.seed)?, 0),
    };
    let mut tcfg = cfg.train.clone();
    tcfg.start_epoch = start_epoch;
    let outcome = train::train(model, &segments, &val_records, &prior, &cfg.weights, &tcfg)?;

    outcome.best_model.save(out.join("best.ckpt"))?;
    outcome.last_model.save(out.join("last.ckpt"))?;
    let history_path = out.join("history.csv");
    if start_epoch > 0 && history_path.exists() {
        let old = std::fs::read_to_string(&history_path)
            .map_err(|e| Error::io(history_path.display().to_string(), e))?;
        let mut text = old.trim_end().to_string();
        for e in &outcome.history.epochs {
            text.push_str(&format!(
                "\n{},{},{},{},{},{},{}",
                e.epoch, e.lr, e.l_dist, e.l_point, e.l_slope, e.l_total, e.val_mae
            ));
        }
        text.push('\n');
        std::fs::write(&history_path, text)
            .map_err(|e| Error::io(history_path.display().to_string(), e))?;
    } else {
        outcome.history.write_csv(&history_path)?;
    }
    write_config_echo(out, &cfg)?;
    let mut inputs: Vec<&Path> = vec![cohort_path];
    inputs.extend(config_path);
    write_manifest(out, &inputs, &cfg.echo())?;
    Ok(outcome)
}

fn screened_records(cohort: &Cohort) -> Vec<&CtgRecord> {
    cohort.records.iter().filter(|r| data::screen(r)).collect()
}

pub fn cmd_predict(cohort_path: &Path, model_path: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let (cohort, _) = data::load_cohort(cohort_path)?;
    let model = Model::load(model_path)?;
    let records = screened_records(&cohort);
    let preds = train::predict_records(&model, &records)?;
    let path = out.join("predictions.csv");
    let file = std::fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path.display().to_string(), e);
    writeln!(w, "record_id,ai_age,gap").map_err(io)?;
    for (rec, p) in records.iter().zip(&preds) {
        writeln!(w, "{},{},{}", rec.record_id, p, p - rec.actual_age_days as f64).map_err(io)?;
    }
    drop(w);
    write_manifest(out, &[cohort_path, model_path], "")?;
    Ok(())
}

pub fn cmd_evaluate(cohort_path: &Path, model_path: &Path, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let (cohort, _) = data::load_cohort(cohort_path)?;
    let model = Model::load(model_path)?;
    let records = screened_records(&cohort);
    let m = train::evaluate(&model, &records)?;
    let json = serde_json::json!({
        "mae": m.mae,
        "mse": m.mse,
        "pearson": m.pearson,
        "n_records": records.len(),
    });
    let text = serde_json::to_string_pretty(&json).unwrap();
    let path = out.join("metrics.json");
    std::fs::write(&path, &text).map_err(|e| Error::io(path.display().to_string(), e))?;
    println!("{text}");
    write_manifest(out, &[cohort_path, model_path], "")?;
    Ok(())
}

/// Read a predictions CSV (record_id,ai_age,gap) into id -> ai_age.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 2 {
            return Err(Error::Parse(format!(
                "{}: line {}: want record_id,ai_age[,gap]",
                path.display(),
                i + 1
            )));
        }
        let age: f64 = cols[1]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("{}: line {}: bad ai_age", path.display(), i + 1)))?;
        out.insert(cols[0].trim().to_string(), age);
    }
    Ok(out)
}

pub fn cmd_analyze(
    predictions: &Path,
    cohort_path: &Path,
    out: &Path,
    bin_width: Option<f64>,
) -> Result<()> {
    ensure_dir(out)?;
    let preds = read_predictions(predictions)?;
    let (cohort, _) = data::load_cohort(cohort_path)?;
    let by_id: BTreeMap<&str, &CtgRecord> = cohort
        .records
        .iter()
        .map(|r| (r.record_id.as_str(), r))
        .collect();
    let mut gaps = Vec::with_capacity(preds.len());
    for (rid, ai_age) in &preds {
        let rec = by_id.get(rid.as_str()).ok_or_else(|| {
            Error::Contract(format!("prediction for unknown record {rid}"))
        })?;
        gaps.push(GapRecord::new(
            rid.clone(),
            *ai_age,
            rec.actual_age_days as f64,
            rec.outcomes.clone(),
            rec.maternal.clone(),
        ));
    }
    let bw = bin_width.unwrap_or(7.0);

    let outcome_table = stats::incidence_table(&gaps, &OutcomeFlags::LABELS)?;
    stats::write_table_csv(&outcome_table, out.join("outcome_incidence.csv"))?;
    stats::write_pairwise_csv(&outcome_table, out.join("outcome_pairwise.csv"))?;
    let maternal_table = stats::incidence_table(&gaps, &MaternalFlags::LABELS)?;
    stats::write_table_csv(&maternal_table, out.join("maternal_incidence.csv"))?;
    stats::write_pairwise_csv(&maternal_table, out.join("maternal_pairwise.csv"))?;

    for label in OutcomeFlags::LABELS.iter().chain(MaternalFlags::LABELS.iter()) {
        let curve = stats::risk_curve(&gaps, label, bw)?;
        stats::write_risk_csv(&curve, out.join(format!("risk_{label}.csv")))?;
        let cells = stats::heatmap_bins(&gaps, label, bw)?;
        stats::write_heatmap_csv(&cells, out.join(format!("heatmap_{label}.csv")))?;
    }
    write_manifest(out, &[predictions, cohort_path], "")?;
    Ok(())
}

pub fn cmd_attend(
    cohort_path: &Path,
    model_path: &Path,
    out: &Path,
    svg: bool,
    record: Option<&str>,
) -> Result<()> {
    ensure_dir(out)?;
    let (cohort, _) = data::load_cohort(cohort_path)?;
    let model = Model::load(model_path)?;
    let records: Vec<&CtgRecord> = screened_records(&cohort)
        .into_iter()
        .filter(|r| record.map_or(true, |id| r.record_id == id))
        .collect();
    if records.is_empty() {
        return Err(Error::Contract("no screened records matched".into()));
    }
    for rec in records {
        let window = train::center_window(rec, INPUT_LEN).ok_or_else(|| {
            Error::Contract(format!("record {} shorter than {INPUT_LEN}", rec.record_id))
        })?;
        let x = Tensor::new(vec![1, 1, INPUT_LEN], window.clone())?;
        let grad = model.input_gradient(&x)?;
        let weights = interpret::attention(&grad, interpret::DEFAULT_GAUSSIAN_SIGMA)?;
        interpret::write_attention_csv(
            &window,
            &weights,
            out.join(format!("attention_{}.csv", rec.record_id)),
        )?;
        if svg {
            interpret::write_attention_svg(
                &window,
                &weights,
                out.join(format!("attention_{}.svg", rec.record_id)),
            )?;
        }
    }
    write_manifest(out, &[cohort_path, model_path], "")?;
    Ok(())
}
