//! Gap stratification, incidence tables, significance tests, risk curves,
//! and heatmap binning.
//!
//! The special functions (regularized incomplete beta and gamma) are
//! implemented here via continued fractions so the statistical core has
//! no external dependency and a documented accuracy of 1e-10.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::{MaternalFlags, OutcomeFlags};
use crate::error::{Error, Result};

// ---- special functions ----

const MAX_ITER: usize = 500;
const CF_EPS: f64 = 1e-15;

/// ln Gamma via the Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
pub fn betainc(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0 && (0.0..=1.0).contains(&x));
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let front = (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln())
        .exp();
    // use the symmetry that converges fastest
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - (front * betacf(b, a, 1.0 - x) / b)
    }
}

fn betacf(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized lower incomplete gamma P(s, x): series for x < s + 1,
/// continued fraction otherwise.
pub fn gammainc(s: f64, x: f64) -> f64 {
    assert!(s > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    if x < s + 1.0 {
        // series representation
        let mut term = 1.0 / s;
        let mut sum = term;
        let mut n = s;
        for _ in 0..MAX_ITER {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * CF_EPS {
                break;
            }
        }
        sum * (-x + s * x.ln() - ln_gamma(s)).exp()
    } else {
        // continued fraction for the upper function
        let tiny = 1e-300;
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=MAX_ITER {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < CF_EPS {
                break;
            }
        }
        1.0 - h * (-x + s * x.ln() - ln_gamma(s)).exp()
    }
}

/// Two-sided p for a t statistic via the incomplete beta.
pub fn t_sf_two_sided(t: f64, df: f64) -> f64 {
    if !t.is_finite() || df <= 0.0 {
        return 1.0;
    }
    betainc(df / 2.0, 0.5, df / (df + t * t)).clamp(f64::MIN_POSITIVE, 1.0)
}

/// Chi-square survival function via the incomplete gamma.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    (1.0 - gammainc(df / 2.0, x / 2.0)).clamp(f64::MIN_POSITIVE, 1.0)
}

// ---- hypothesis tests ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Welch's two-sample t test with population (1/n) variances in both the
/// statistic and the Welch-Satterthwaite degrees of freedom.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Contract("welch_t needs >= 2 samples per group".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let pvar = |v: &[f64], m: f64| v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
    let (m1, m2) = (mean(a), mean(b));
    let (v1, v2) = (pvar(a, m1), pvar(b, m2));
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let se2 = v1 / n1 + v2 / n2;
    if se2 == 0.0 {
        // zero variance in both groups; equal means give t = 0, p = 1
        return Ok(WelchResult {
            t: if m1 == m2 { 0.0 } else { f64::INFINITY * (m1 - m2).signum() },
            df: n1 + n2 - 2.0,
            p: if m1 == m2 { 1.0 } else { 0.0 },
        });
    }
    let t = (m1 - m2) / se2.sqrt();
    let df = se2 * se2 / ((v1 / n1).powi(2) / (n1 - 1.0) + (v2 / n2).powi(2) / (n2 - 1.0));
    Ok(WelchResult {
        t,
        df,
        p: t_sf_two_sided(t, df),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KruskalResult {
    pub h: f64,
    pub df: f64,
    pub p: f64,
}

/// Kruskal-Wallis H with mid-ranks and tie correction; p from the
/// chi-square approximation with df = groups - 1.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalResult> {
    if groups.len() < 2 || groups.iter().any(|g| g.is_empty()) {
        return Err(Error::Contract(
            "kruskal_wallis needs >= 2 nonempty groups".into(),
        ));
    }
    let n_total: usize = groups.iter().map(|g| g.len()).sum();
    if n_total < 3 {
        return Err(Error::Contract("kruskal_wallis needs total N >= 3".into()));
    }
    // pool and mid-rank
    let mut pooled: Vec<(f64, usize)> = Vec::with_capacity(n_total);
    for (gi, g) in groups.iter().enumerate() {
        for &v in g {
            if !v.is_finite() {
                return Err(Error::Contract("kruskal_wallis on non-finite value".into()));
            }
            pooled.push((v, gi));
        }
    }
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut rank_sum = vec![0.0; groups.len()];
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            rank_sum[pooled[k].1] += mid_rank;
        }
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let n = n_total as f64;
    let mut h = 0.0;
    for (gi, g) in groups.iter().enumerate() {
        h += rank_sum[gi] * rank_sum[gi] / g.len() as f64;
    }
    h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);
    let correction = 1.0 - tie_term / (n * n * n - n);
    let df = (groups.len() - 1) as f64;
    if correction <= 0.0 {
        // every value identical
        return Ok(KruskalResult { h: 0.0, df, p: 1.0 });
    }
    h /= correction;
    Ok(KruskalResult {
        h,
        df,
        p: chi2_sf(h, df),
    })
}

// ---- gap stratification ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GapBand {
    /// gap < -21 days: underestimation.
    LtM21,
    /// -21 <= gap < -7.
    M21M7,
    /// -7 <= gap <= 7: normal reference.
    M7P7,
    /// 7 < gap <= 21.
    P7P21,
    /// gap > 21 days: overestimation.
    Gt21,
}

impl GapBand {
    pub const ALL: [GapBand; 5] = [
        GapBand::LtM21,
        GapBand::M21M7,
        GapBand::M7P7,
        GapBand::P7P21,
        GapBand::Gt21,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            GapBand::LtM21 => "lt_m21",
            GapBand::M21M7 => "m21_m7",
            GapBand::M7P7 => "m7_p7",
            GapBand::P7P21 => "p7_p21",
            GapBand::Gt21 => "gt_p21",
        }
    }

    pub fn index(&self) -> usize {
        GapBand::ALL.iter().position(|b| b == self).unwrap()
    }
}

/// Band boundaries: [-inf,-21), [-21,-7), [-7,7], (7,21], (21,inf).
/// The central band is closed so exactly +/-7 counts as normal.
pub fn stratify(gap: f64) -> GapBand {
    if gap < -21.0 {
        GapBand::LtM21
    } else if gap < -7.0 {
        GapBand::M21M7
    } else if gap <= 7.0 {
        GapBand::M7P7
    } else if gap <= 21.0 {
        GapBand::P7P21
    } else {
        GapBand::Gt21
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRecord {
    pub record_id: String,
    pub ai_age: f64,
    pub actual_age: f64,
    pub gap: f64,
    pub band: GapBand,
    pub outcomes: OutcomeFlags,
    pub maternal: MaternalFlags,
}

impl GapRecord {
    pub fn new(
        record_id: String,
        ai_age: f64,
        actual_age: f64,
        outcomes: OutcomeFlags,
        maternal: MaternalFlags,
    ) -> Self {
        let gap = ai_age - actual_age;
        GapRecord {
            record_id,
            ai_age,
            actual_age,
            gap,
            band: stratify(gap),
            outcomes,
            maternal,
        }
    }

    /// Underestimation or overestimation band.
    pub fn high_risk(&self) -> bool {
        matches!(self.band, GapBand::LtM21 | GapBand::Gt21)
    }
}

// ---- incidence table ----

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub counts: [usize; 5],
    /// Percent of the band, absent when the band is empty.
    pub percents: [Option<f64>; 5],
    /// Welch t on per-record binary indicators, high-risk union vs the
    /// central band.
    pub p_welch_high_risk: Option<f64>,
    /// Pairwise Welch tests among the three displayed bands.
    pub p_welch_lt_vs_center: Option<f64>,
    pub p_welch_gt_vs_center: Option<f64>,
    pub p_welch_lt_vs_gt: Option<f64>,
    /// Omnibus Kruskal-Wallis H across all five bands.
    pub p_kruskal: Option<f64>,
    pub h_kruskal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapTable {
    pub band_n: [usize; 5],
    pub rows: Vec<TableRow>,
}

/// Binary indicator vectors per band for one label.
fn band_indicators(gaps: &[GapRecord], get: impl Fn(&GapRecord) -> bool) -> [Vec<f64>; 5] {
    let mut out: [Vec<f64>; 5] = Default::default();
    for g in gaps {
        out[g.band.index()].push(if get(g) { 1.0 } else { 0.0 });
    }
    out
}

fn welch_p(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    welch_t(a, b).ok().map(|r| r.p)
}

pub fn incidence_table(gaps: &[GapRecord], labels: &[&str]) -> Result<GapTable> {
    if gaps.is_empty() {
        return Err(Error::Contract("incidence_table on empty input".into()));
    }
    let mut band_n = [0usize; 5];
    for g in gaps {
        band_n[g.band.index()] += 1;
    }
    let mut rows = Vec::new();
    for &label in labels {
        let get = |g: &GapRecord| {
            g.outcomes
                .get(label)
                .or_else(|| g.maternal.get(label))
                .unwrap_or(false)
        };
        let ind = band_indicators(gaps, get);
        let mut counts = [0usize; 5];
        let mut percents = [None; 5];
        for i in 0..5 {
            counts[i] = ind[i].iter().filter(|&&v| v == 1.0).count();
            if band_n[i] > 0 {
                percents[i] = Some(100.0 * counts[i] as f64 / band_n[i] as f64);
            }
        }
        let mut high_risk: Vec<f64> = ind[0].clone();
        high_risk.extend(&ind[4]);
        let center = &ind[2];
        let nonempty: Vec<Vec<f64>> = ind.iter().filter(|v| !v.is_empty()).cloned().collect();
        let kw = if nonempty.len() >= 2 {
            kruskal_wallis(&nonempty).ok()
        } else {
            None
        };
        rows.push(TableRow {
            label: label.to_string(),
            counts,
            percents,
            p_welch_high_risk: welch_p(&high_risk, center),
            p_welch_lt_vs_center: welch_p(&ind[0], center),
            p_welch_gt_vs_center: welch_p(&ind[4], center),
            p_welch_lt_vs_gt: welch_p(&ind[0], &ind[4]),
            p_kruskal: kw.map(|r| r.p),
            h_kruskal: kw.map(|r| r.h),
        });
    }
    Ok(GapTable { band_n, rows })
}

/// Incidence CSV: one outcome row, five band columns holding
/// "count (percent)", then the high-risk Welch p and the omnibus H p.
pub fn write_table_csv(table: &GapTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path.display().to_string(), e);
    let bands: Vec<&str> = GapBand::ALL.iter().map(|b| b.as_str()).collect();
    writeln!(w, "label,{},p_t_test,p_h_test", bands.join(",")).map_err(io)?;
    for row in &table.rows {
        let cells: Vec<String> = (0..5)
            .map(|i| match row.percents[i] {
                Some(pct) => format!("{} ({:.2})", row.counts[i], pct),
                None => format!("{} (na)", row.counts[i]),
            })
            .collect();
        let fmt_p = |p: Option<f64>| p.map_or("na".to_string(), |v| format!("{v:.6}"));
        writeln!(
            w,
            "{},{},{},{}",
            row.label,
            cells.join(","),
            fmt_p(row.p_welch_high_risk),
            fmt_p(row.p_kruskal)
        )
        .map_err(io)?;
    }
    Ok(())
}

/// All labeled pairwise tests for auditing which bands each p compares.
pub fn write_pairwise_csv(table: &GapTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path.display().to_string(), e);
    writeln!(
        w,
        "label,p_welch_high_risk_vs_center,p_welch_lt_vs_center,p_welch_gt_vs_center,p_welch_lt_vs_gt,h_kruskal,p_kruskal"
    )
    .map_err(io)?;
    let fmt = |p: Option<f64>| p.map_or("na".to_string(), |v| format!("{v:.6}"));
    for row in &table.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            row.label,
            fmt(row.p_welch_high_risk),
            fmt(row.p_welch_lt_vs_center),
            fmt(row.p_welch_gt_vs_center),
            fmt(row.p_welch_lt_vs_gt),
            fmt(row.h_kruskal),
            fmt(row.p_kruskal)
        )
        .map_err(io)?;
    }
    Ok(())
}

// ---- risk curve ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskPoint {
    pub bin_center: f64,
    pub incidence: f64,
    pub n: usize,
    pub low_support: bool,
    pub smoothed: f64,
}

pub const LOW_SUPPORT_N: usize = 20;

/// Incidence of one outcome as a function of gap, binned at `bin_width`
/// days, with a 3-bin centered moving average.
pub fn risk_curve(gaps: &[GapRecord], label: &str, bin_width: f64) -> Result<Vec<RiskPoint>> {
    if gaps.is_empty() {
        return Err(Error::Contract("risk_curve on empty input".into()));
    }
    if bin_width <= 0.0 {
        return Err(Error::Config("bin_width must be > 0".into()));
    }
    let get = |g: &GapRecord| {
        g.outcomes
            .get(label)
            .or_else(|| g.maternal.get(label))
            .unwrap_or(false)
    };
    let mut bins: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    for g in gaps {
        let idx = (g.gap / bin_width).floor() as i64;
        let e = bins.entry(idx).or_insert((0, 0));
        e.0 += 1;
        if get(g) {
            e.1 += 1;
        }
    }
    let raw: Vec<(f64, usize, usize)> = bins
        .iter()
        .map(|(&idx, &(n, pos))| ((idx as f64 + 0.5) * bin_width, n, pos))
        .collect();
    let incidences: Vec<f64> = raw.iter().map(|&(_, n, p)| p as f64 / n as f64).collect();
    let mut out = Vec::with_capacity(raw.len());
    for (i, &(center, n, _)) in raw.iter().enumerate() {
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(raw.len() - 1);
        let smoothed = incidences[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
        out.push(RiskPoint {
            bin_center: center,
            incidence: incidences[i],
            n,
            low_support: n < LOW_SUPPORT_N,
            smoothed,
        });
    }
    Ok(out)
}

pub fn write_risk_csv(points: &[RiskPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path.display().to_string(), e);
    writeln!(w, "bin_center,incidence,smoothed,n,low_support").map_err(io)?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.bin_center, p.incidence, p.smoothed, p.n, p.low_support
        )
        .map_err(io)?;
    }
    Ok(())
}

// ---- heatmap ----

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapCell {
    pub age_weeks: i64,
    pub gap_bin_center: f64,
    pub count: usize,
    /// Absent when the cell has zero support.
    pub incidence: Option<f64>,
}

/// 2D histogram of one outcome over (gestational week, gap bin).
pub fn heatmap_bins(gaps: &[GapRecord], label: &str, gap_bin_width: f64) -> Result<Vec<HeatmapCell>> {
    if gaps.is_empty() {
        return Err(Error::Contract("heatmap_bins on empty input".into()));
    }
    let get = |g: &GapRecord| {
        g.outcomes
            .get(label)
            .or_else(|| g.maternal.get(label))
            .unwrap_or(false)
    };
    let mut cells: BTreeMap<(i64, i64), (usize, usize)> = BTreeMap::new();
    for g in gaps {
        let week = (g.actual_age / 7.0).floor() as i64;
        let gap_idx = (g.gap / gap_bin_width).floor() as i64;
        let e = cells.entry((week, gap_idx)).or_insert((0, 0));
        e.0 += 1;
        if get(g) {
            e.1 += 1;
        }
    }
    Ok(cells
        .into_iter()
        .map(|((week, gap_idx), (count, pos))| HeatmapCell {
            age_weeks: week,
            gap_bin_center: (gap_idx as f64 + 0.5) * gap_bin_width,
            count,
            incidence: if count > 0 {
                Some(pos as f64 / count as f64)
            } else {
                None
            },
        })
        .collect())
}

pub fn write_heatmap_csv(cells: &[HeatmapCell], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path.display().to_string(), e);
    writeln!(w, "age_weeks,gap_bin_center,count,incidence").map_err(io)?;
    for c in cells {
        writeln!(
            w,
            "{},{},{},{}",
            c.age_weeks,
            c.gap_bin_center,
            c.count,
            c.incidence.map_or("na".into(), |v| v.to_string())
        )
        .map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratify_boundary_examples() {
        assert_eq!(stratify(-34.30), GapBand::LtM21);
        assert_eq!(stratify(-44.75), GapBand::LtM21);
        assert_eq!(stratify(0.0), GapBand::M7P7);
        assert_eq!(stratify(31.58), GapBand::Gt21);
        assert_eq!(stratify(38.27), GapBand::Gt21);
    }

    #[test]
    fn stratify_boundaries_partition_the_line() {
        assert_eq!(stratify(-21.0), GapBand::M21M7);
        assert_eq!(stratify(-7.0), GapBand::M7P7);
        assert_eq!(stratify(7.0), GapBand::M7P7);
        assert_eq!(stratify(7.000001), GapBand::P7P21);
        assert_eq!(stratify(21.0), GapBand::P7P21);
        assert_eq!(stratify(21.000001), GapBand::Gt21);
        assert_eq!(stratify(f64::MAX), GapBand::Gt21);
        assert_eq!(stratify(-f64::MAX), GapBand::LtM21);
    }

    #[test]
    fn welch_fixture() {
        let r = welch_t(&[1.0, 2.0, 3.0, 4.0], &[2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((r.t - (-1.2649110640673518)).abs() < 1e-10, "t = {}", r.t);
        assert!((r.df - 6.0).abs() < 1e-9);
        assert!((r.p - 0.2527).abs() < 1e-3, "p = {}", r.p);
    }

    #[test]
    fn welch_identical_groups() {
        let r = welch_t(&[3.0, 3.0, 3.0], &[3.0, 3.0, 3.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn welch_scale_invariance_of_t_in_balanced_design() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 3.0, 4.0, 5.0];
        let a2: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let b2: Vec<f64> = b.iter().map(|v| 2.0 * v).collect();
        let r1 = welch_t(&a, &b).unwrap();
        let r2 = welch_t(&a2, &b2).unwrap();
        assert!((r1.t - r2.t).abs() < 1e-12);
    }

    #[test]
    fn welch_permutation_invariant_within_groups() {
        let r1 = welch_t(&[1.0, 4.0, 2.0, 3.0], &[5.0, 2.0, 3.0, 4.0]).unwrap();
        let r2 = welch_t(&[1.0, 2.0, 3.0, 4.0], &[2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn kruskal_fixture() {
        let r = kruskal_wallis(&[
            vec![1.0, 2.0, 3.0],
            vec![4.0, 5.0, 6.0],
            vec![7.0, 8.0, 9.0],
        ])
        .unwrap();
        assert!((r.h - 7.2).abs() < 1e-12, "h = {}", r.h);
        assert_eq!(r.df, 2.0);
        assert!((r.p - 0.02732372244729252).abs() < 1e-10);
    }

    #[test]
    fn kruskal_identical_groups() {
        let r = kruskal_wallis(&[vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(r.h, 0.0);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn kruskal_distinct_groups_low_p() {
        let r = kruskal_wallis(&[
            vec![1.0, 2.0, 3.0, 4.0],
            vec![10.0, 11.0, 12.0, 13.0],
            vec![20.0, 21.0, 22.0, 23.0],
        ])
        .unwrap();
        assert!(r.p < 0.05);
    }

    #[test]
    fn special_function_oracle_points() {
        // frozen against an independent high-accuracy evaluation
        let beta_points: [(f64, f64, f64, f64); 10] = [
            (0.5, 0.5, 0.25, 3.3333333333333337e-01),
            (0.5, 0.5, 0.75, 6.6666666666666663e-01),
            (1.0, 3.0, 0.2, 4.8800000000000010e-01),
            (2.0, 2.0, 0.5, 5.0000000000000000e-01),
            (2.5, 3.5, 0.3, 2.9675298929566646e-01),
            (3.0, 1.0, 0.9, 7.2899999999999998e-01),
            (5.0, 5.0, 0.5, 5.0000000000000000e-01),
            (10.0, 2.0, 0.8, 3.2212254720000011e-01),
            (0.1, 0.1, 0.5, 4.9999999999999989e-01),
            (4.0, 6.0, 0.35, 3.9110558653906247e-01),
        ];
        for (a, b, x, expected) in beta_points {
            let got = betainc(a, b, x);
            assert!(
                (got - expected).abs() < 1e-8,
                "betainc({a},{b},{x}) = {got}, want {expected}"
            );
        }
        let gamma_points: [(f64, f64, f64); 10] = [
            (0.5, 0.5, 6.8268949213708585e-01),
            (1.0, 1.0, 6.3212055882855767e-01),
            (2.0, 1.5, 4.4217459962892519e-01),
            (3.0, 6.0, 9.3803119558334103e-01),
            (5.0, 2.5, 1.0882198108584877e-01),
            (0.5, 4.0, 9.9532226501895271e-01),
            (10.0, 9.0, 4.1259175566805828e-01),
            (2.5, 0.3, 1.1996757205906265e-02),
            (7.0, 14.0, 9.8577208165573849e-01),
            (1.5, 1.5, 6.0837482372891094e-01),
        ];
        for (s, x, expected) in gamma_points {
            let got = gammainc(s, x);
            assert!(
                (got - expected).abs() < 1e-8,
                "gammainc({s},{x}) = {got}, want {expected}"
            );
        }
    }

    fn gap_rec(id: usize, gap: f64, premature: bool) -> GapRecord {
        let mut outcomes = OutcomeFlags::default();
        outcomes.premature = premature;
        GapRecord::new(
            format!("r{id}"),
            260.0 + gap,
            260.0,
            outcomes,
            MaternalFlags::default(),
        )
    }

    #[test]
    fn incidence_percentages_match_counts() {
        let mut gaps = Vec::new();
        for i in 0..50 {
            gaps.push(gap_rec(i, 0.0, i < 5)); // central band, 10%
        }
        for i in 50..70 {
            gaps.push(gap_rec(i, 30.0, i < 60)); // overestimation band, 50%
        }
        let t = incidence_table(&gaps, &["premature"]).unwrap();
        assert_eq!(t.band_n, [0, 0, 50, 0, 20]);
        let row = &t.rows[0];
        assert_eq!(row.counts[2], 5);
        assert!((row.percents[2].unwrap() - 10.0).abs() < 1e-12);
        assert!((row.percents[4].unwrap() - 50.0).abs() < 1e-12);
        assert_eq!(row.percents[0], None); // empty band reported absent
        // percentages reproduce count / band_n
        for i in 0..5 {
            if let Some(p) = row.percents[i] {
                assert!((p - 100.0 * row.counts[i] as f64 / t.band_n[i] as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn incidence_all_false_flags() {
        let gaps: Vec<GapRecord> = (0..10).map(|i| gap_rec(i, 0.0, false)).collect();
        let t = incidence_table(&gaps, &["premature", "gdm"]).unwrap();
        for row in &t.rows {
            assert_eq!(row.counts, [0; 5]);
        }
    }

    #[test]
    fn risk_curve_flat_for_constant_risk() {
        let mut gaps = Vec::new();
        for i in 0..3000 {
            // deterministic 10% incidence at every gap
            let gap = -30.0 + (i % 61) as f64;
            gaps.push(gap_rec(i, gap, i % 10 == 0));
        }
        let curve = risk_curve(&gaps, "premature", 7.0).unwrap();
        for p in curve.iter().filter(|p| !p.low_support) {
            assert!((p.incidence - 0.1).abs() < 0.05, "{p:?}");
        }
    }

    #[test]
    fn risk_curve_empty_outcome_zero_incidence() {
        let gaps: Vec<GapRecord> = (0..100).map(|i| gap_rec(i, (i % 40) as f64, false)).collect();
        let curve = risk_curve(&gaps, "premature", 7.0).unwrap();
        assert!(curve.iter().all(|p| p.incidence == 0.0));
    }

    #[test]
    fn heatmap_single_record_and_conservation() {
        let gaps = vec![gap_rec(0, 3.0, true)];
        let cells = heatmap_bins(&gaps, "premature", 7.0).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].count, 1);
        assert_eq!(cells[0].age_weeks, 37); // 260 days
        assert_eq!(cells[0].incidence, Some(1.0));

        let gaps: Vec<GapRecord> = (0..500)
            .map(|i| gap_rec(i, -35.0 + (i % 70) as f64, i % 7 == 0))
            .collect();
        let cells = heatmap_bins(&gaps, "premature", 7.0).unwrap();
        let total: usize = cells.iter().map(|c| c.count).sum();
        assert_eq!(total, 500);
    }

    #[test]
    fn table_csv_shape() {
        let gaps: Vec<GapRecord> = (0..200)
            .map(|i| gap_rec(i, -35.0 + (i % 70) as f64, i % 11 == 0))
            .collect();
        let t = incidence_table(&gaps, &OutcomeFlags::LABELS.to_vec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("table.csv");
        write_table_csv(&t, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7); // header + 6 outcome rows
        assert_eq!(lines[0].split(',').count(), 8); // label + 5 bands + 2 p
    }
}
