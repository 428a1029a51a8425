//! End-to-end training on a small synthetic cohort: screen, split,
//! window, build the prior, train the small network, and report test
//! metrics against the constant-mean baseline.

use ctgage::augment::AugmentConfig;
use ctgage::data::{self, Split};
use ctgage::loss::{self, LossWeights};
use ctgage::net1d::{Model, Net1DConfig};
use ctgage::synth::{self, SynthSpec};
use ctgage::train::{self, TrainConfig};

fn main() {
    let spec = SynthSpec { n_subjects: 300, seed: 4, ..SynthSpec::default() };
    let (mut cohort, _) = synth::generate_cohort(&spec, false).unwrap();
    println!("generated {} records", cohort.records.len());

    data::split_cohort(&mut cohort, 4, (8, 1, 1)).unwrap();
    let train_records = cohort.records_in(Split::Train);
    let val_records = cohort.records_in(Split::Val);
    let test_records = cohort.records_in(Split::Test);
    println!(
        "split: {} train / {} val / {} test records",
        train_records.len(),
        val_records.len(),
        test_records.len()
    );

    let segments =
        train::build_training_set(&train_records, &AugmentConfig::default(), 4).unwrap();
    println!("{} training segments after windowing + augmentation", segments.len());

    let labels: Vec<f64> = segments.iter().map(|s| s.label_days).collect();
    let prior = loss::build_prior(&labels, 1.0, 1e-6).unwrap();

    let tcfg = TrainConfig {
        batch_size: 64,
        max_epochs: 5,
        seed: 4,
        ..TrainConfig::default()
    };
    let model = Model::build(Net1DConfig::small(), 4).unwrap();
    println!("model: {} parameters", model.param_count());

    let out = train::train(model, &segments, &val_records, &prior,
        &LossWeights::default(), &tcfg).unwrap();
    for e in &out.history.epochs {
        println!(
            "epoch {:>2}  lr {:.2e}  total {:8.3}  val MAE {:6.2} d",
            e.epoch, e.lr, e.l_total, e.val_mae
        );
    }

    let metrics = train::evaluate(&out.best_model, &test_records).unwrap();
    let mean_label = train_records.iter().map(|r| r.actual_age_days as f64).sum::<f64>()
        / train_records.len() as f64;
    let baseline = test_records
        .iter()
        .map(|r| (mean_label - r.actual_age_days as f64).abs())
        .sum::<f64>()
        / test_records.len() as f64;
    println!(
        "test MAE {:.2} d (constant-mean baseline {:.2} d), Pearson {:.3}",
        metrics.mae,
        baseline,
        metrics.pearson.unwrap_or(f64::NAN)
    );
}
