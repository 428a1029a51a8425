//! The distribution-aligned loss piece by piece: the truncated-normal
//! prior over the label range, its batch quantiles, and how the three
//! loss terms react to biased and to compressed prediction batches.

use ctgage::loss::{self, LossWeights};
use ctgage::tensor::{Tape, Tensor};

fn components(preds: &[f64], targets: &[f64], prior: &loss::PriorVector) -> (f64, f64, f64) {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::new(vec![preds.len()], preds.to_vec()).unwrap());
    let (_, c) =
        loss::total_loss(&mut tape, p, targets, prior, &LossWeights::default(), 1.0).unwrap();
    (c.dist, c.point, c.slope)
}

fn main() {
    // labels clustered around 250-270 days, as in a real delivery ward
    let labels: Vec<f64> = (0..200)
        .map(|i| if i % 10 == 0 { 215.0 + (i / 10) as f64 * 4.0 } else { 250.0 + (i % 20) as f64 })
        .collect();
    let prior = loss::build_prior(&labels, 1.0, 1e-6).unwrap();
    println!(
        "prior: mu {:.1}, sigma {:.1} (x0.8), {} bins over [{:.0}, {:.0}], sum {:.12}",
        prior.spec.mu,
        prior.spec.sigma,
        prior.probs.len(),
        prior.spec.label_min,
        prior.spec.label_max,
        prior.probs.iter().sum::<f64>()
    );
    println!(
        "quantiles 10/50/90%: {:.1} / {:.1} / {:.1} days",
        prior.quantile(0.1),
        prior.quantile(0.5),
        prior.quantile(0.9)
    );

    let targets: Vec<f64> = (0..16).map(|i| 225.0 + 4.0 * i as f64).collect();

    let perfect: Vec<f64> = targets.clone();
    let biased: Vec<f64> = targets.iter().map(|t| t + 12.0).collect();
    let mean = targets.iter().sum::<f64>() / 16.0;
    let compressed: Vec<f64> = targets.iter().map(|t| mean + 0.2 * (t - mean)).collect();

    for (name, preds) in [
        ("perfect", &perfect),
        ("biased +12 d", &biased),
        ("compressed to the mean", &compressed),
    ] {
        let (d, p, s) = components(preds, &targets, &prior);
        println!("{name:<24} L_dist {d:7.3}  L_point {p:7.3}  L_slope {s:7.3}");
    }
}
