//! Input-gradient attention weights and visualization exports.
//!
//! Pipeline: |gradient| -> log compression (scaled by the median nonzero
//! magnitude so the transform is scale-free) -> Gaussian smoothing with
//! reflective boundary -> min-max normalization into [0, 1].

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_GAUSSIAN_SIGMA: f64 = 8.0; // samples: 4 s at 2 Hz

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSeries {
    pub weights: Vec<f64>,
    pub gaussian_sigma: f64,
    pub record_id: String,
    pub predicted_age: f64,
    pub gap: f64,
}

/// Discrete Gaussian smoothing with reflective boundary handling.
pub fn gaussian_filter(x: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 || x.is_empty() {
        return x.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let n = x.len() as i64;
    let reflect = |mut i: i64| -> usize {
        // reflect about the edges until in range
        loop {
            if i < 0 {
                i = -i - 1;
            } else if i >= n {
                i = 2 * n - i - 1;
            } else {
                return i as usize;
            }
        }
    };
    (0..n)
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * x[reflect(t + j as i64 - radius)])
                .sum::<f64>()
                / ksum
        })
        .collect()
}

/// Turn a raw input gradient into normalized attention weights.
pub fn attention(grad: &[f64], gaussian_sigma: f64) -> Result<Vec<f64>> {
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("attention on non-finite gradient".into()));
    }
    let mut w: Vec<f64> = grad.iter().map(|v| v.abs()).collect();
    let mut nonzero: Vec<f64> = w.iter().cloned().filter(|&v| v > 0.0).collect();
    if nonzero.is_empty() {
        return Ok(vec![0.0; grad.len()]);
    }
    nonzero.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if nonzero.len() % 2 == 1 {
        nonzero[nonzero.len() / 2]
    } else {
        0.5 * (nonzero[nonzero.len() / 2 - 1] + nonzero[nonzero.len() / 2])
    };
    for v in w.iter_mut() {
        *v = (1.0 + *v / median).ln();
    }
    let smoothed = gaussian_filter(&w, gaussian_sigma);
    let min = smoothed.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = smoothed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= min {
        return Ok(vec![0.0; grad.len()]);
    }
    Ok(smoothed.iter().map(|v| (v - min) / (max - min)).collect())
}

/// Linear white-to-red colormap; weight 0 -> #FFFFFF, weight 1 -> #FF0000.
pub fn weight_color(w: f64) -> String {
    let w = w.clamp(0.0, 1.0);
    let gb = ((1.0 - w) * 255.0).round() as u8;
    format!("#FF{gb:02X}{gb:02X}")
}

pub fn write_attention_csv(
    fhr: &[f64],
    weights: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    if fhr.len() != weights.len() {
        return Err(Error::Shape(format!(
            "attention csv: {} fhr samples vs {} weights",
            fhr.len(),
            weights.len()
        )));
    }
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path.display().to_string(), e);
    writeln!(w, "index,fhr,weight").map_err(io)?;
    for (i, (f, wt)) in fhr.iter().zip(weights).enumerate() {
        writeln!(w, "{i},{f},{wt}").map_err(io)?;
    }
    Ok(())
}

/// FHR polyline color-mapped by attention weight, 1200x300 viewBox, axes
/// labeled in minutes and bpm.
pub fn write_attention_svg(
    fhr: &[f64],
    weights: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    if fhr.len() != weights.len() || fhr.is_empty() {
        return Err(Error::Shape("attention svg: length mismatch or empty".into()));
    }
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path.display().to_string(), e);

    const W: f64 = 1200.0;
    const H: f64 = 300.0;
    const ML: f64 = 50.0; // margins
    const MR: f64 = 10.0;
    const MT: f64 = 10.0;
    const MB: f64 = 35.0;
    let (y_min, y_max) = (60.0, 200.0);
    let n = fhr.len();
    let px = |i: usize| ML + (W - ML - MR) * i as f64 / (n - 1).max(1) as f64;
    let py = |v: f64| {
        let v = v.clamp(y_min, y_max);
        MT + (H - MT - MB) * (1.0 - (v - y_min) / (y_max - y_min))
    };

    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}">"#
    )
    .map_err(io)?;
    writeln!(w, r#"<rect width="{W}" height="{H}" fill="white"/>"#).map_err(io)?;
    // axes
    writeln!(
        w,
        r#"<line x1="{ML}" y1="{MT}" x2="{ML}" y2="{}" stroke="black"/>"#,
        H - MB
    )
    .map_err(io)?;
    writeln!(
        w,
        r#"<line x1="{ML}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - MB,
        W - MR,
        H - MB
    )
    .map_err(io)?;
    // y labels in bpm
    for bpm in [60, 100, 140, 180] {
        writeln!(
            w,
            r#"<text x="5" y="{:.1}" font-size="10">{} bpm</text>"#,
            py(bpm as f64) + 3.0,
            bpm
        )
        .map_err(io)?;
    }
    // x labels in minutes (2 Hz sampling)
    let total_min = n as f64 / 120.0;
    let mut m = 0.0;
    while m <= total_min {
        let i = ((m * 120.0) as usize).min(n - 1);
        writeln!(
            w,
            r#"<text x="{:.1}" y="{:.1}" font-size="10">{:.0} min</text>"#,
            px(i) - 8.0,
            H - MB + 15.0,
            m
        )
        .map_err(io)?;
        m += 5.0;
    }
    // signal segments colored by weight
    for i in 0..n - 1 {
        let color = weight_color(0.5 * (weights[i] + weights[i + 1]));
        writeln!(
            w,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="1.2"/>"#,
            px(i),
            py(fhr[i]),
            px(i + 1),
            py(fhr[i + 1]),
            color
        )
        .map_err(io)?;
    }
    writeln!(w, "</svg>").map_err(io)?;
    Ok(())
}
