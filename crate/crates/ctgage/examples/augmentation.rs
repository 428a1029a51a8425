//! The augmentation pipeline: sliding windows, time warping, and the
//! label-density rule that gives rare labels extra distorted copies.

use ctgage::augment::{self, AugmentConfig};

fn main() {
    let cfg = AugmentConfig::default();
    let series: Vec<f64> = (0..2400).map(|t| 140.0 + (t as f64 / 60.0).sin() * 5.0).collect();

    let windows = augment::sliding_windows(&series, cfg.window_len, cfg.stride);
    println!(
        "series of {} samples -> {} windows of {} (stride {})",
        series.len(),
        windows.len(),
        cfg.window_len,
        cfg.stride
    );

    // warping compresses or stretches time, then crops/pads back
    let ramp: Vec<f64> = (0..1800).map(|t| t as f64 * 0.01).collect();
    for factor in [0.9, 1.0, 1.1] {
        let warped = augment::time_warp(&ramp, factor);
        let slope = (warped[1000] - warped[800]) / 200.0;
        println!("warp factor {factor}: length {} slope {slope:.5}", warped.len());
    }

    // labels clustered at 260 d with a thin tail at 285+: the tail gets
    // extra copies, capped at the configured multiplier
    let labels: Vec<f64> = (0..100)
        .map(|i| if i < 90 { 258.0 + (i % 5) as f64 } else { 286.0 + (i % 5) as f64 })
        .collect();
    let mult = augment::density_multiplicity(&labels, cfg.density_bins, cfg.sparse_multiplier_cap);
    println!(
        "bulk label multiplicity {}x, tail label multiplicity {}x (cap {})",
        mult[0],
        mult[95],
        cfg.sparse_multiplier_cap
    );

    // distorted copies are reproducible: keyed rng per (seed, record, window)
    let mut rng = augment::augment_rng(1, "rec000", 0);
    let a = augment::distort(&ramp, &cfg, &mut rng);
    let mut rng = augment::augment_rng(1, "rec000", 0);
    let b = augment::distort(&ramp, &cfg, &mut rng);
    println!("deterministic distortion: {}", a == b);
}
