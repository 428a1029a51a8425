//! Sliding windows, random temporal distortion, noise injection, and
//! density-based extra augmentation for sparse label regions.
//!
//! Only the extra copies created for sparse-label samples receive
//! warp + noise; the base sliding windows are untouched, so a run with
//! multiplicity 1 everywhere is exactly the sliding-window multiset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub window_len: usize,
    pub stride: usize,
    pub warp_range: (f64, f64),
    pub noise_sd: f64,
    pub density_bins: usize,
    pub sparse_multiplier_cap: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            window_len: 1800,
            stride: 600,
            warp_range: (0.9, 1.1),
            noise_sd: 1.0,
            density_bins: 12,
            sparse_multiplier_cap: 4,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if !(self.warp_range.0 > 0.0
            && self.warp_range.0 <= 1.0
            && self.warp_range.1 >= 1.0
            && self.warp_range.0 <= self.warp_range.1)
        {
            return Err(Error::Config(format!(
                "warp range {:?} must satisfy 0 < low <= 1 <= high",
                self.warp_range
            )));
        }
        if self.noise_sd < 0.0 {
            return Err(Error::Config("noise_sd must be >= 0".into()));
        }
        if self.density_bins == 0 || self.sparse_multiplier_cap == 0 {
            return Err(Error::Config("density bins and cap must be >= 1".into()));
        }
        Ok(())
    }
}

/// Windows at starts 0, stride, 2*stride, ...; each exactly `window_len`
/// long. A series shorter than the window yields an empty list.
pub fn sliding_windows(series: &[f64], window_len: usize, stride: usize) -> Vec<Vec<f64>> {
    if series.len() < window_len || window_len == 0 {
        return Vec::new();
    }
    let count = (series.len() - window_len) / stride + 1;
    (0..count)
        .map(|i| series[i * stride..i * stride + window_len].to_vec())
        .collect()
}

/// Resample by linear interpolation to round(len * factor) samples, then
/// center-crop or edge-pad back to the original length. Factor 1 is the
/// identity.
pub fn time_warp(segment: &[f64], factor: f64) -> Vec<f64> {
    let n = segment.len();
    if n == 0 || factor == 1.0 {
        return segment.to_vec();
    }
    let m = ((n as f64 * factor).round() as usize).max(1);
    let mut resampled = Vec::with_capacity(m);
    if m == 1 {
        resampled.push(segment[0]);
    } else {
        let scale = (n - 1) as f64 / (m - 1) as f64;
        for i in 0..m {
            let x = i as f64 * scale;
            let lo = x.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = x - lo as f64;
            resampled.push(segment[lo] * (1.0 - frac) + segment[hi] * frac);
        }
    }
    if m == n {
        resampled
    } else if m > n {
        // center crop
        let start = (m - n) / 2;
        resampled[start..start + n].to_vec()
    } else {
        // edge-pad by replication, split evenly with the extra on the right
        let pad = n - m;
        let left = pad / 2;
        let mut out = Vec::with_capacity(n);
        out.extend(std::iter::repeat(resampled[0]).take(left));
        out.extend_from_slice(&resampled);
        out.extend(std::iter::repeat(*resampled.last().unwrap()).take(pad - left));
        out
    }
}

/// Histogram labels into equal-width bins and give each sample a
/// duplication multiplicity of min(cap, round(max_bin / own_bin)).
/// Samples in the fullest bin always get 1.
pub fn density_multiplicity(labels: &[f64], bins: usize, cap: usize) -> Vec<usize> {
    assert!(!labels.is_empty(), "density_multiplicity on empty labels");
    let min = labels.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = labels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return vec![1; labels.len()];
    }
    let width = (max - min) / bins as f64;
    let bin_of = |v: f64| (((v - min) / width) as usize).min(bins - 1);
    let mut counts = vec![0usize; bins];
    for &v in labels {
        counts[bin_of(v)] += 1;
    }
    let max_count = *counts.iter().max().unwrap();
    labels
        .iter()
        .map(|&v| {
            let c = counts[bin_of(v)];
            let m = (max_count as f64 / c as f64).round() as usize;
            m.clamp(1, cap)
        })
        .collect()
}

/// Rng substream keyed by (record id, window index) so augmentation is
/// reproducible regardless of iteration order.
pub fn augment_rng(seed: u64, record_id: &str, window_index: usize) -> ChaCha8Rng {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    seed.hash(&mut h);
    record_id.hash(&mut h);
    window_index.hash(&mut h);
    ChaCha8Rng::seed_from_u64(h.finish())
}

/// Apply warp + noise to one extra copy.
pub fn distort(segment: &[f64], config: &AugmentConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let factor = rng.gen_range(config.warp_range.0..=config.warp_range.1);
    let mut out = time_warp(segment, factor);
    if config.noise_sd > 0.0 {
        for v in out.iter_mut() {
            let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
            let u2: f64 = rng.gen();
            *v += config.noise_sd
                * (-2.0 * u1.ln()).sqrt()
                * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_count_and_starts() {
        let series: Vec<f64> = (0..2400).map(|i| i as f64).collect();
        let ws = sliding_windows(&series, 1800, 600);
        assert_eq!(ws.len(), 2);
        assert_eq!(ws[0][0], 0.0);
        assert_eq!(ws[1][0], 600.0);
        assert!(ws.iter().all(|w| w.len() == 1800));
    }

    #[test]
    fn exact_length_gives_identity_window() {
        let series: Vec<f64> = (0..1800).map(|i| i as f64).collect();
        let ws = sliding_windows(&series, 1800, 100);
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0], series);
    }

    #[test]
    fn short_series_gives_empty() {
        let series = vec![0.0; 1799];
        assert!(sliding_windows(&series, 1800, 600).is_empty());
    }

    #[test]
    fn warp_factor_one_is_identity() {
        let seg: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        assert_eq!(time_warp(&seg, 1.0), seg);
    }

    #[test]
    fn warp_preserves_constant_series() {
        let seg = vec![7.5; 128];
        for factor in [0.9, 0.95, 1.05, 1.1] {
            let out = time_warp(&seg, factor);
            assert_eq!(out.len(), 128);
            assert!(out.iter().all(|v| (v - 7.5).abs() < 1e-12));
        }
    }

    #[test]
    fn warp_scales_central_slope_of_ramp() {
        let n = 1001;
        let seg: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let factor = 1.1;
        let out = time_warp(&seg, factor);
        assert_eq!(out.len(), n);
        // central region slope should be 1/1.1 within 1e-6
        let mid = n / 2;
        let slope = out[mid + 1] - out[mid];
        assert!((slope - 1.0 / factor).abs() < 1e-6, "slope {slope}");
    }

    #[test]
    fn uniform_labels_get_multiplicity_one() {
        let labels: Vec<f64> = (0..120).map(|i| 210.0 + (i % 12) as f64 * 7.0).collect();
        let m = density_multiplicity(&labels, 12, 4);
        assert!(m.iter().all(|&x| x == 1));
    }

    #[test]
    fn sparse_bin_capped() {
        // one bin with 100 samples, another with 10, cap 4
        let mut labels = vec![210.0; 100];
        labels.extend(vec![290.0; 10]);
        let m = density_multiplicity(&labels, 2, 4);
        assert!(m[..100].iter().all(|&x| x == 1));
        assert!(m[100..].iter().all(|&x| x == 4));
    }

    #[test]
    fn degenerate_single_label() {
        let labels = vec![250.0; 30];
        let m = density_multiplicity(&labels, 12, 4);
        assert!(m.iter().all(|&x| x == 1));
    }

    #[test]
    fn balancing_reduces_histogram_ratio() {
        let mut labels = vec![255.0; 90];
        labels.extend((0..10).map(|i| 285.0 + i as f64));
        let m = density_multiplicity(&labels, 6, 4);
        let effective: Vec<f64> = labels
            .iter()
            .zip(&m)
            .flat_map(|(&l, &k)| std::iter::repeat(l).take(k))
            .collect();
        let ratio = |ls: &[f64]| {
            let dense = ls.iter().filter(|&&l| l < 280.0).count() as f64;
            let sparse = ls.iter().filter(|&&l| l >= 280.0).count() as f64;
            dense / sparse
        };
        assert!(ratio(&effective) < ratio(&labels));
    }

    #[test]
    fn distort_is_reproducible_per_key() {
        let cfg = AugmentConfig::default();
        let seg: Vec<f64> = (0..1800).map(|i| 140.0 + (i as f64 / 50.0).sin()).collect();
        let a = distort(&seg, &cfg, &mut augment_rng(1, "rec0", 3));
        let b = distort(&seg, &cfg, &mut augment_rng(1, "rec0", 3));
        let c = distort(&seg, &cfg, &mut augment_rng(1, "rec0", 4));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
