//! Gap-band stratification and the clinical tables: plant an outcome
//! whose incidence rises with the absolute gap, then recover it in the
//! band table, the pairwise tests, and the risk curve.

use ctgage::data::{MaternalFlags, OutcomeFlags};
use ctgage::stats::{self, GapRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut gaps = Vec::new();
    for i in 0..2000 {
        // gaps roughly normal around 0, sd 14 days
        let gap: f64 = (0..12).map(|_| rng.gen_range(-7.0..7.0)).sum::<f64>();
        let actual = rng.gen_range(220.0..290.0);
        // premature risk grows with |gap|
        let p = 0.02 + 0.012 * gap.abs();
        let mut outcomes = OutcomeFlags::default();
        outcomes.premature = rng.gen::<f64>() < p;
        gaps.push(GapRecord::new(
            format!("rec{i:05}"),
            actual + gap,
            actual,
            outcomes,
            MaternalFlags::default(),
        ));
    }

    let table = stats::incidence_table(&gaps, &["premature"]).unwrap();
    println!("records per band: {:?}", table.band_n);
    let row = &table.rows[0];
    for (band, (n, pct)) in stats::GapBand::ALL
        .iter()
        .zip(row.counts.iter().zip(&row.percents))
    {
        println!(
            "  {:<7} premature {:>3} ({:.2}%)",
            band.as_str(),
            n,
            pct.unwrap_or(f64::NAN)
        );
    }
    println!(
        "high-risk vs center Welch p = {:.6}, omnibus H = {:.3} (p = {:.6})",
        row.p_welch_high_risk.unwrap(),
        row.h_kruskal.unwrap(),
        row.p_kruskal.unwrap()
    );

    let curve = stats::risk_curve(&gaps, "premature", 7.0).unwrap();
    println!("risk curve (7-day bins, 3-bin moving average):");
    for pt in curve {
        println!(
            "  gap {:>6.1} d  incidence {:5.2}%  n={}{}",
            pt.bin_center,
            100.0 * pt.smoothed,
            pt.n,
            if pt.low_support { "  (low support)" } else { "" }
        );
    }
}
