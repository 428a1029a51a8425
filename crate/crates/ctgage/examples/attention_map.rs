//! Saliency for one record: input gradient -> log compression -> Gaussian
//! smoothing -> normalized attention weights, exported as CSV and SVG.

use ctgage::interpret;
use ctgage::net1d::{Model, Net1DConfig, INPUT_LEN};
use ctgage::synth::{self, SynthSpec};
use ctgage::tensor::Tensor;
use ctgage::train::center_window;

fn main() {
    let spec = SynthSpec { n_subjects: 1, seed: 12, ..SynthSpec::default() };
    let (cohort, _) = synth::generate_cohort(&spec, false).unwrap();
    let record = &cohort.records[0];
    let window = center_window(record, INPUT_LEN).unwrap();

    // an untrained model still produces a well-defined saliency signal
    let model = Model::build(Net1DConfig::small(), 12).unwrap();
    let x = Tensor::new(vec![1, 1, INPUT_LEN], window.clone()).unwrap();
    let grad = model.input_gradient(&x).unwrap();
    let weights = interpret::attention(&grad, interpret::DEFAULT_GAUSSIAN_SIGMA).unwrap();

    let peak = weights
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    println!(
        "record {}: attention peak at sample {} ({:.1} min), weight {:.3}",
        record.record_id,
        peak.0,
        peak.0 as f64 / 120.0,
        peak.1
    );
    println!(
        "weight range [{:.3}, {:.3}]",
        weights.iter().cloned().fold(f64::INFINITY, f64::min),
        weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    );

    let out = std::env::temp_dir().join("ctgage_example_attention");
    std::fs::create_dir_all(&out).unwrap();
    interpret::write_attention_csv(&window, &weights, out.join("attention.csv")).unwrap();
    interpret::write_attention_svg(&window, &weights, out.join("attention.svg")).unwrap();
    println!("wrote {}", out.display());
}
