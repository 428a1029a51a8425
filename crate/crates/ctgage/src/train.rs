//! Optimization loop: Adam with decoupled L2 weight decay, cosine
//! annealing with warm restarts, early stopping on validation MAE, plus
//! dataset assembly from windows and evaluation metrics.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{self, AugmentConfig};
use crate::data::CtgRecord;
use crate::error::{Error, Result};
use crate::loss::{self, LossWeights, PriorVector};
use crate::net1d::{Model, ParamKind, INPUT_LEN};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub warm_restart_t0: usize,
    pub warm_restart_t_mult: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Soft-sort temperature at epoch 0; halved at each warm restart.
    pub temperature0: f64,
    /// First epoch index, nonzero when resuming.
    pub start_epoch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            l2_lambda: 1e-3,
            batch_size: 64,
            max_epochs: 300,
            early_stop_patience: 20,
            warm_restart_t0: 10,
            warm_restart_t_mult: 2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            temperature0: 1.0,
            start_epoch: 0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 || self.early_stop_patience < 1 || self.warm_restart_t0 < 1 {
            return Err(Error::Config(
                "lr0 > 0, patience >= 1, warm restart T0 >= 1 required".into(),
            ));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        Ok(())
    }
}

/// Cycle index and position for cosine annealing with warm restarts.
fn cycle_of(epoch: usize, t0: usize, t_mult: usize) -> (usize, usize, usize) {
    let mut start = 0usize;
    let mut len = t0;
    let mut cycle = 0usize;
    loop {
        if epoch < start + len {
            return (cycle, epoch - start, len);
        }
        start += len;
        len = len.saturating_mul(t_mult.max(1));
        cycle += 1;
    }
}

/// Learning rate at an epoch: lr_min + (lr0 - lr_min)/2 * (1 + cos(pi t/T)),
/// lr_min = lr0/100, resetting to lr0 at each cycle start.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    let (_, t, len) = cycle_of(epoch, config.warm_restart_t0, config.warm_restart_t_mult);
    let lr_min = config.lr0 / 100.0;
    lr_min
        + (config.lr0 - lr_min) / 2.0
            * (1.0 + (std::f64::consts::PI * t as f64 / len as f64).cos())
}

/// Soft-sort temperature at an epoch: halved per completed restart.
pub fn temperature_at(epoch: usize, config: &TrainConfig) -> f64 {
    let (cycle, _, _) = cycle_of(epoch, config.warm_restart_t0, config.warm_restart_t_mult);
    config.temperature0 * 0.5f64.powi(cycle as i32)
}

/// One training segment: a fixed-length window plus its age label.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub window: Vec<f64>,
    pub label_days: f64,
    pub record_id: String,
}

/// Sliding windows for every record, then extra warped+noised copies for
/// sparse-label segments per the density rule.
pub fn build_training_set(
    records: &[&CtgRecord],
    config: &AugmentConfig,
    seed: u64,
) -> Result<Vec<Segment>> {
    config.validate()?;
    let mut base: Vec<Segment> = Vec::new();
    for rec in records {
        for (wi, w) in augment::sliding_windows(&rec.fhr, config.window_len, config.stride)
            .into_iter()
            .enumerate()
        {
            let _ = wi;
            base.push(Segment {
                window: w,
                label_days: rec.actual_age_days as f64,
                record_id: rec.record_id.clone(),
            });
        }
    }
    if base.is_empty() {
        return Ok(base);
    }
    let labels: Vec<f64> = base.iter().map(|s| s.label_days).collect();
    let mult = augment::density_multiplicity(&labels, config.density_bins, config.sparse_multiplier_cap);
    let mut out = Vec::with_capacity(base.len());
    for (i, seg) in base.into_iter().enumerate() {
        for copy in 1..mult[i] {
            let mut rng = augment::augment_rng(seed, &seg.record_id, (i << 8) | copy);
            out.push(Segment {
                window: augment::distort(&seg.window, config, &mut rng),
                label_days: seg.label_days,
                record_id: seg.record_id.clone(),
            });
        }
        out.push(seg);
    }
    Ok(out)
}

/// The single center window of a record, used for evaluation so each
/// record contributes exactly once.
pub fn center_window(record: &CtgRecord, window_len: usize) -> Option<Vec<f64>> {
    if record.fhr.len() < window_len {
        return None;
    }
    let start = (record.fhr.len() - window_len) / 2;
    Some(record.fhr[start..start + window_len].to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
    /// Absent for datasets with fewer than 2 records.
    pub pearson: Option<f64>,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

pub fn metrics_from_pairs(preds: &[f64], labels: &[f64]) -> Metrics {
    let n = preds.len() as f64;
    let mae = preds
        .iter()
        .zip(labels)
        .map(|(p, l)| (p - l).abs())
        .sum::<f64>()
        / n;
    let mse = preds
        .iter()
        .zip(labels)
        .map(|(p, l)| (p - l) * (p - l))
        .sum::<f64>()
        / n;
    Metrics {
        mae,
        mse,
        pearson: pearson(preds, labels),
    }
}

/// Center-window predictions for a set of records, batched.
pub fn predict_records(model: &Model, records: &[&CtgRecord]) -> Result<Vec<f64>> {
    let mut preds = Vec::with_capacity(records.len());
    let chunk = 32;
    for batch in records.chunks(chunk) {
        let mut data = Vec::with_capacity(batch.len() * INPUT_LEN);
        for rec in batch {
            let w = center_window(rec, INPUT_LEN).ok_or_else(|| {
                Error::Contract(format!("record {} shorter than {INPUT_LEN}", rec.record_id))
            })?;
            data.extend(w);
        }
        let x = Tensor::new(vec![batch.len(), 1, INPUT_LEN], data)?;
        preds.extend(model.predict(&x)?);
    }
    Ok(preds)
}

pub fn evaluate(model: &Model, records: &[&CtgRecord]) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::Contract("evaluate on empty dataset".into()));
    }
    let preds = predict_records(model, records)?;
    let labels: Vec<f64> = records.iter().map(|r| r.actual_age_days as f64).collect();
    Ok(metrics_from_pairs(&preds, &labels))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub l_dist: f64,
    pub l_point: f64,
    pub l_slope: f64,
    pub l_total: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path.display().to_string(), e);
        writeln!(w, "epoch,lr,l_dist,l_point,l_slope,l_total,val_mae").map_err(io)?;
        for e in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                e.epoch, e.lr, e.l_dist, e.l_point, e.l_slope, e.l_total, e.val_mae
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

struct AdamState {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    step: u64,
}

impl AdamState {
    fn new() -> Self {
        AdamState {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
        }
    }

    fn apply(
        &mut self,
        model: &mut Model,
        grads: &BTreeMap<String, Vec<f64>>,
        lr: f64,
        config: &TrainConfig,
    ) {
        self.step += 1;
        let t = self.step as f64;
        let b1 = config.adam_beta1;
        let b2 = config.adam_beta2;
        let bias1 = 1.0 - b1.powf(t);
        let bias2 = 1.0 - b2.powf(t);
        let (m_map, v_map) = (&mut self.m, &mut self.v);
        model.visit_params_mut(|name, tensor, kind| {
            let g = match grads.get(&name) {
                Some(g) => g,
                None => return,
            };
            let m = m_map.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = v_map.entry(name).or_insert_with(|| vec![0.0; g.len()]);
            // decoupled weight decay, batchnorm affine excluded
            if config.l2_lambda > 0.0 && kind != ParamKind::BnAffine {
                for w in tensor.data.iter_mut() {
                    *w *= 1.0 - lr * config.l2_lambda;
                }
            }
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                tensor.data[i] -= lr * m_hat / (v_hat.sqrt() + config.adam_eps);
            }
        });
    }
}

pub struct TrainOutcome {
    pub best_model: Model,
    pub last_model: Model,
    pub history: History,
}

/// Train on segments with the distribution-aligned loss; early stopping on
/// validation MAE computed from the validation records' center windows.
/// Serial and deterministic for a given seed.
pub fn train(
    mut model: Model,
    train_segments: &[Segment],
    val_records: &[&CtgRecord],
    prior: &PriorVector,
    weights: &LossWeights,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    weights.validate()?;
    if train_segments.is_empty() || val_records.is_empty() {
        return Err(Error::Sizing("train and validation sets must be nonempty".into()));
    }
    // label standardization constants from the training set only
    let labels: Vec<f64> = train_segments.iter().map(|s| s.label_days).collect();
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    let sd = (labels.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n).sqrt();
    model.label_mean = mean;
    model.label_sd = if sd > 0.0 { sd } else { 1.0 };

    let mut adam = AdamState::new();
    let mut history = History::default();
    let mut best: Option<(f64, Model)> = None;
    let mut bad_epochs = 0usize;

    for e in 0..config.max_epochs {
        let epoch = config.start_epoch + e;
        let lr = lr_schedule(epoch, config);
        let temperature = temperature_at(epoch, config);

        let mut order: Vec<usize> = (0..train_segments.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9E37_79B9).wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue; // slope term needs at least two samples
            }
            let mut data = Vec::with_capacity(chunk.len() * INPUT_LEN);
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                data.extend(&train_segments[i].window);
                targets.push(train_segments[i].label_days);
            }
            let x = Tensor::new(vec![chunk.len(), 1, INPUT_LEN], data)?;
            let mut tape = Tape::new();
            let input = tape.leaf(x);
            let (preds, param_vars) = model.forward(&mut tape, input, true)?;
            let (total, comp) =
                loss::total_loss(&mut tape, preds, &targets, prior, weights, temperature)?;
            if !comp.total.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_index}"
                )));
            }
            tape.backward(total)?;
            let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (name, var) in param_vars {
                grads.insert(name, tape.grad(var));
            }
            adam.apply(&mut model, &grads, lr, config);
            sums.0 += comp.dist;
            sums.1 += comp.point;
            sums.2 += comp.slope;
            sums.3 += comp.total;
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::Sizing("no trainable batches of size >= 2".into()));
        }

        let val = evaluate(&model, val_records)?;
        history.epochs.push(EpochStats {
            epoch,
            lr,
            l_dist: sums.0 / batches as f64,
            l_point: sums.1 / batches as f64,
            l_slope: sums.2 / batches as f64,
            l_total: sums.3 / batches as f64,
            val_mae: val.mae,
        });

        let improved = best.as_ref().map_or(true, |(b, _)| val.mae < *b);
        if improved {
            best = Some((val.mae, model.clone()));
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= config.early_stop_patience {
                break;
            }
        }
    }
    let (_, best_model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best_model,
        last_model: model,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MaternalFlags, OutcomeFlags};
    use crate::net1d::Net1DConfig;

    #[test]
    fn lr_schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 1e-3);
        // mid-cycle: (lr0 + lr_min) / 2
        let mid = lr_schedule(5, &cfg);
        assert!((mid - (1e-3 + 1e-5) / 2.0).abs() < 1e-12, "{mid}");
        // restart at epoch 10
        assert_eq!(lr_schedule(10, &cfg), 1e-3);
        // second cycle spans 20 epochs: next restart at 30
        assert_eq!(lr_schedule(30, &cfg), 1e-3);
        assert!(lr_schedule(29, &cfg) < 1e-3);
    }

    #[test]
    fn temperature_halves_each_restart() {
        let cfg = TrainConfig::default();
        assert_eq!(temperature_at(0, &cfg), 1.0);
        assert_eq!(temperature_at(9, &cfg), 1.0);
        assert_eq!(temperature_at(10, &cfg), 0.5);
        assert_eq!(temperature_at(30, &cfg), 0.25);
    }

    fn toy_record(id: usize, age: i64, len: usize) -> CtgRecord {
        CtgRecord {
            record_id: format!("r{id}"),
            subject_id: format!("s{id}"),
            fhr: (0..len)
                .map(|t| 150.0 - 0.1 * (age - 210) as f64 + ((t % 17) as f64 - 8.0) / 8.0)
                .collect(),
            ua: None,
            actual_age_days: age,
            outcomes: OutcomeFlags::default(),
            maternal: MaternalFlags::default(),
        }
    }

    #[test]
    fn metrics_hand_fixture() {
        let m = metrics_from_pairs(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]);
        assert!((m.mae - 4.0 / 3.0).abs() < 1e-12);
        assert!((m.pearson.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_perfect_model() {
        let m = metrics_from_pairs(&[250.0, 260.0, 280.0], &[250.0, 260.0, 280.0]);
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.mse, 0.0);
        assert!((m.pearson.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_undefined_below_two() {
        let records = vec![toy_record(0, 250, 2400)];
        let refs: Vec<&CtgRecord> = records.iter().collect();
        let model = Model::build(Net1DConfig::small(), 1).unwrap();
        let m = evaluate(&model, &refs).unwrap();
        assert!(m.pearson.is_none());
    }

    #[test]
    fn center_window_is_centered() {
        let rec = toy_record(0, 250, 2400);
        let w = center_window(&rec, 1800).unwrap();
        assert_eq!(w.len(), 1800);
        assert_eq!(w[0], rec.fhr[300]);
        assert!(center_window(&toy_record(1, 250, 1799), 1800).is_none());
    }

    fn tiny_training_setup() -> (Vec<Segment>, Vec<CtgRecord>, PriorVector) {
        let mut segments = Vec::new();
        let mut val = Vec::new();
        for i in 0..24 {
            let age = 220 + (i % 8) * 9;
            let rec = toy_record(i, age as i64, 2400);
            if i < 18 {
                segments.extend(
                    build_training_set(&[&rec], &AugmentConfig::default(), 1).unwrap(),
                );
            } else {
                val.push(rec);
            }
        }
        let labels: Vec<f64> = segments.iter().map(|s| s.label_days).collect();
        let prior = crate::loss::build_prior(&labels, 1.0, 1e-6).unwrap();
        (segments, val, prior)
    }

    #[test]
    fn training_is_deterministic() {
        let (segments, val, prior) = tiny_training_setup();
        let refs: Vec<&CtgRecord> = val.iter().collect();
        let cfg = TrainConfig {
            max_epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let run = || {
            let model = Model::build(Net1DConfig::small(), 3).unwrap();
            train(model, &segments, &refs, &prior, &LossWeights::default(), &cfg).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.history, b.history);
        assert_eq!(a.last_model, b.last_model);
    }

    #[test]
    fn early_stop_with_frozen_lr_stops_at_epoch_two() {
        let (segments, val, prior) = tiny_training_setup();
        let refs: Vec<&CtgRecord> = val.iter().collect();
        let cfg = TrainConfig {
            lr0: 1e-30, // effectively frozen: validation cannot improve
            max_epochs: 50,
            early_stop_patience: 1,
            batch_size: 8,
            ..TrainConfig::default()
        };
        // freeze the running batchnorm statistics too, so the validation
        // metric is exactly constant across epochs
        let mut mc = Net1DConfig::small();
        mc.bn_momentum = 0.0;
        let model = Model::build(mc, 3).unwrap();
        let out = train(model, &segments, &refs, &prior, &LossWeights::default(), &cfg).unwrap();
        assert_eq!(out.history.epochs.len(), 2);
    }

    #[test]
    fn best_model_not_worse_than_later_epochs() {
        let (segments, val, prior) = tiny_training_setup();
        let refs: Vec<&CtgRecord> = val.iter().collect();
        let cfg = TrainConfig {
            max_epochs: 4,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let model = Model::build(Net1DConfig::small(), 3).unwrap();
        let out = train(model, &segments, &refs, &prior, &LossWeights::default(), &cfg).unwrap();
        let best = evaluate(&out.best_model, &refs).unwrap().mae;
        let min_hist = out
            .history
            .epochs
            .iter()
            .map(|e| e.val_mae)
            .fold(f64::INFINITY, f64::min);
        assert!((best - min_hist).abs() < 1e-9);
    }

    #[test]
    fn untrained_predictions_near_label_mean() {
        let (segments, val, prior) = tiny_training_setup();
        let refs: Vec<&CtgRecord> = val.iter().collect();
        let cfg = TrainConfig {
            lr0: 1e-30,
            max_epochs: 1,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let model = Model::build(Net1DConfig::small(), 3).unwrap();
        let out = train(model, &segments, &refs, &prior, &LossWeights::default(), &cfg).unwrap();
        let preds = predict_records(&out.last_model, &refs).unwrap();
        let mean_pred = preds.iter().sum::<f64>() / preds.len() as f64;
        let labels: Vec<f64> = segments.iter().map(|s| s.label_days).collect();
        let lm = labels.iter().sum::<f64>() / labels.len() as f64;
        let lsd =
            (labels.iter().map(|l| (l - lm).powi(2)).sum::<f64>() / labels.len() as f64).sqrt();
        assert!((mean_pred - lm).abs() < 2.0 * lsd, "{mean_pred} vs {lm}");
    }
}
