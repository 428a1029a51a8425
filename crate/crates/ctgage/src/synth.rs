//! Synthetic CTG cohort generator with planted, documented age structure.
//!
//! Every signal is built from a known generative function of a
//! "developmental age": a linearly falling baseline, a fixed sinusoidal
//! long-term variability, white short-term variability whose scale grows
//! with age, Poisson-placed acceleration bumps whose rate grows with age,
//! deceleration dips, and white noise. Because the function is known,
//! developmental age is identifiable from (mean FHR, variability,
//! acceleration count), which makes the cohort a ground-truth oracle for
//! the learning pipeline: disease subjects are generated at a shifted
//! developmental age (the planted gap) and outcome flags are drawn from a
//! logistic model on |gap|.
//!
//! None of the defaults claim clinical fidelity; they follow textbook CTG
//! trends only closely enough to make the regression task realistic.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Cohort, CtgRecord, MaternalFlags, OutcomeFlags};
use crate::error::{Error, Result};

pub const SAMPLES_PER_RECORD: usize = 2400; // 20 min at 2 Hz
const SHORT_RECORD_SAMPLES: usize = 1200; // fails the 1800-sample screen
const LTV_AMPLITUDE_BPM: f64 = 3.0;
const LTV_PERIOD_SAMPLES: f64 = 120.0; // one minute
const ACCEL_BUMP_BPM: f64 = 15.0;
const ACCEL_WIDTH_SAMPLES: usize = 60; // ~30 s
const DECEL_DIP_BPM: f64 = 20.0;
const DECEL_WIDTH_SAMPLES: usize = 90; // ~45 s
/// Acceleration rate grows by this fraction per day of developmental age.
const ACCEL_RATE_GROWTH_PER_DAY: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub sessions_per_subject: (usize, usize),
    pub age_range_days: (i64, i64),
    pub baseline_at_210: f64,
    pub baseline_slope: f64,
    pub stv_base: f64,
    pub stv_slope: f64,
    /// Events per hour at developmental age 210; grows 1%/day after.
    pub accel_rate: f64,
    pub decel_rate: f64,
    pub noise_sd: f64,
    /// Maternal disease label -> planted developmental-age shift in days.
    pub planted_gap_days: BTreeMap<String, f64>,
    /// Fraction of subjects assigned one of the planted disease labels.
    pub disease_fraction: f64,
    /// Outcome label -> (intercept, coefficient on |planted gap|) for the
    /// Bernoulli(sigmoid(...)) outcome draw.
    pub outcome_logit: BTreeMap<String, (f64, f64)>,
    /// Fraction of records emitted short (1200 samples) to exercise
    /// screening.
    pub short_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_subjects: 2000,
            sessions_per_subject: (1, 3),
            age_range_days: (210, 294),
            baseline_at_210: 150.0,
            baseline_slope: -0.1,
            stv_base: 5.0,
            stv_slope: 0.02,
            accel_rate: 10.0,
            decel_rate: 2.0,
            noise_sd: 2.0,
            planted_gap_days: BTreeMap::new(),
            disease_fraction: 0.0,
            outcome_logit: BTreeMap::new(),
            short_fraction: 0.0,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.age_range_days.0 <= 0 || self.age_range_days.1 > 294 {
            return Err(Error::Config(format!(
                "age range {:?} must lie within (0, 294]",
                self.age_range_days
            )));
        }
        if self.age_range_days.0 > self.age_range_days.1 {
            return Err(Error::Config("age range is inverted".into()));
        }
        if self.accel_rate < 0.0 || self.decel_rate < 0.0 || self.noise_sd < 0.0 {
            return Err(Error::Config("rates and noise must be >= 0".into()));
        }
        for key in self.planted_gap_days.keys().chain(self.outcome_logit.keys()) {
            let known = OutcomeFlags::LABELS.contains(&key.as_str())
                || MaternalFlags::LABELS.contains(&key.as_str());
            if !known {
                return Err(Error::Config(format!("unknown condition label {key:?}")));
            }
        }
        if self.sessions_per_subject.0 < 1 || self.sessions_per_subject.0 > self.sessions_per_subject.1
        {
            return Err(Error::Config("sessions_per_subject range invalid".into()));
        }
        for &age in &[self.age_range_days.0, self.age_range_days.1] {
            let b = self.baseline(age as f64);
            if !(100.0..=180.0).contains(&b) {
                return Err(Error::Config(format!(
                    "baseline {b:.1} bpm at day {age} leaves [100, 180]"
                )));
            }
        }
        Ok(())
    }

    pub fn baseline(&self, developmental_age_days: f64) -> f64 {
        self.baseline_at_210 + self.baseline_slope * (developmental_age_days - 210.0)
    }

    pub fn stv(&self, developmental_age_days: f64) -> f64 {
        (self.stv_base + self.stv_slope * (developmental_age_days - 210.0)).max(0.0)
    }

    pub fn accel_rate_at(&self, developmental_age_days: f64) -> f64 {
        (self.accel_rate * (1.0 + ACCEL_RATE_GROWTH_PER_DAY * (developmental_age_days - 210.0)))
            .max(0.0)
    }

    /// The deterministic part of the signal: baseline plus long-term
    /// variability sinusoid.
    pub fn deterministic_curve(&self, developmental_age_days: f64, len: usize) -> Vec<f64> {
        let base = self.baseline(developmental_age_days);
        (0..len)
            .map(|t| {
                base + LTV_AMPLITUDE_BPM
                    * (2.0 * std::f64::consts::PI * t as f64 / LTV_PERIOD_SAMPLES).sin()
            })
            .collect()
    }
}

/// splitmix64; used to derive independent per-record rng streams.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn substream(seed: u64, subject: u64, session: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ 0xC7A6_E5D4).wrapping_add(subject) ^ mix(session)))
}

fn sample_poisson(rng: &mut ChaCha8Rng, lambda: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    // Knuth's method; lambdas here are small (a handful of events).
    let l = (-lambda).exp();
    let mut k = 0usize;
    let mut p = 1.0;
    loop {
        p *= rng.gen::<f64>();
        if p <= l {
            return k;
        }
        k += 1;
    }
}

fn sample_gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, single draw per call for stream simplicity.
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn add_bump(fhr: &mut [f64], center: usize, width: usize, amplitude: f64) {
    let half = width / 2;
    let start = center.saturating_sub(half);
    let end = (center + half).min(fhr.len());
    for t in start..end {
        let phase = (t - start) as f64 / (end - start).max(1) as f64;
        fhr[t] += amplitude * (std::f64::consts::PI * phase).sin();
    }
}

/// Generate one record at the given developmental age, labeled with
/// `labeled_age_days`. Flags are left all-false; planting happens in
/// [`generate_cohort`].
pub fn generate_record(
    spec: &SynthSpec,
    subject_id: &str,
    developmental_age_days: f64,
    labeled_age_days: i64,
    rng: &mut ChaCha8Rng,
) -> CtgRecord {
    let len = if spec.short_fraction > 0.0 && rng.gen::<f64>() < spec.short_fraction {
        SHORT_RECORD_SAMPLES
    } else {
        SAMPLES_PER_RECORD
    };
    let mut fhr = spec.deterministic_curve(developmental_age_days, len);

    let hours = len as f64 / 2.0 / 3600.0;
    let n_accel = sample_poisson(rng, spec.accel_rate_at(developmental_age_days) * hours);
    for _ in 0..n_accel {
        let c = rng.gen_range(0..len);
        add_bump(&mut fhr, c, ACCEL_WIDTH_SAMPLES, ACCEL_BUMP_BPM);
    }
    let n_decel = sample_poisson(rng, spec.decel_rate * hours);
    for _ in 0..n_decel {
        let c = rng.gen_range(0..len);
        add_bump(&mut fhr, c, DECEL_WIDTH_SAMPLES, -DECEL_DIP_BPM);
    }

    let stv = spec.stv(developmental_age_days);
    if stv > 0.0 || spec.noise_sd > 0.0 {
        let sd = (stv * stv + spec.noise_sd * spec.noise_sd).sqrt();
        if sd > 0.0 {
            for v in fhr.iter_mut() {
                *v += sd * sample_gaussian(rng);
            }
        }
    }

    CtgRecord {
        record_id: String::new(),
        subject_id: subject_id.to_string(),
        fhr,
        ua: None,
        actual_age_days: labeled_age_days,
        outcomes: OutcomeFlags::default(),
        maternal: MaternalFlags::default(),
    }
}

/// Sidecar ground truth for one generated record.
#[derive(Debug, Clone)]
pub struct OracleRow {
    pub record_id: String,
    pub planted_gap_days: f64,
    pub developmental_age_days: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-subject plan, derived deterministically from the spec seed so that
/// parallel and serial generation agree bit-for-bit.
struct SubjectPlan {
    disease: Option<(String, f64)>,
    sessions: Vec<(i64, u64)>, // (labeled age, session index)
}

fn plan_subject(spec: &SynthSpec, subject: u64) -> SubjectPlan {
    let mut rng = substream(spec.seed, subject, u64::MAX);
    let n_sessions = rng.gen_range(spec.sessions_per_subject.0..=spec.sessions_per_subject.1);
    let disease = if !spec.planted_gap_days.is_empty() && rng.gen::<f64>() < spec.disease_fraction
    {
        let labels: Vec<&String> = spec.planted_gap_days.keys().collect();
        let label = labels[rng.gen_range(0..labels.len())].clone();
        let gap = spec.planted_gap_days[&label];
        Some((label, gap))
    } else {
        None
    };
    let sessions = (0..n_sessions)
        .map(|s| {
            let age = rng.gen_range(spec.age_range_days.0..=spec.age_range_days.1);
            (age, s as u64)
        })
        .collect();
    SubjectPlan { disease, sessions }
}

fn generate_subject(spec: &SynthSpec, subject: u64) -> (Vec<CtgRecord>, Vec<OracleRow>) {
    let plan = plan_subject(spec, subject);
    let mut records = Vec::with_capacity(plan.sessions.len());
    let mut oracle = Vec::with_capacity(plan.sessions.len());
    let gap = plan.disease.as_ref().map(|(_, g)| *g).unwrap_or(0.0);
    for &(labeled_age, session) in &plan.sessions {
        let mut rng = substream(spec.seed, subject, session);
        let dev_age = labeled_age as f64 + gap;
        let subject_id = format!("subj{subject:06}");
        let mut rec = generate_record(spec, &subject_id, dev_age, labeled_age, &mut rng);
        rec.record_id = format!("rec{subject:06}_{session}");
        if let Some((label, _)) = &plan.disease {
            // planted condition names may refer to either flag set
            if !rec.outcomes.set(label, true) {
                rec.maternal.set(label, true);
            }
        }
        for (outcome, (a, b)) in &spec.outcome_logit {
            let p = sigmoid(a + b * gap.abs());
            if rng.gen::<f64>() < p {
                rec.outcomes.set(outcome, true);
            }
        }
        oracle.push(OracleRow {
            record_id: rec.record_id.clone(),
            planted_gap_days: gap,
            developmental_age_days: dev_age,
        });
        records.push(rec);
    }
    (records, oracle)
}

/// Generate the full cohort plus its oracle rows. With `parallel` the
/// subjects are generated across threads; per-record rng substreams make
/// the result identical to the serial path.
pub fn generate_cohort(spec: &SynthSpec, parallel: bool) -> Result<(Cohort, Vec<OracleRow>)> {
    spec.validate()?;
    let pairs: Vec<(Vec<CtgRecord>, Vec<OracleRow>)> = if parallel {
        (0..spec.n_subjects as u64)
            .into_par_iter()
            .map(|s| generate_subject(spec, s))
            .collect()
    } else {
        (0..spec.n_subjects as u64)
            .map(|s| generate_subject(spec, s))
            .collect()
    };
    let mut records = Vec::new();
    let mut oracle = Vec::new();
    for (r, o) in pairs {
        records.extend(r);
        oracle.extend(o);
    }
    Ok((
        Cohort {
            records,
            split_of: Default::default(),
            seed: spec.seed,
        },
        oracle,
    ))
}

pub fn write_oracle_csv(rows: &[OracleRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "record_id,planted_gap_days,developmental_age_days")
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{}",
            r.record_id, r.planted_gap_days, r.developmental_age_days
        )
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Least-squares estimate of developmental age from the documented
/// generative features (mean FHR, mean absolute first difference, bump
/// count proxy). Used by tests as the independent learnability oracle and
/// by planted-gap checks.
pub fn feature_age_fit(records: &[&CtgRecord]) -> impl Fn(&CtgRecord) -> f64 {
    // features: [1, mean_fhr, mean_abs_diff]
    let feats: Vec<[f64; 3]> = records.iter().map(|r| record_features(r)).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.actual_age_days as f64).collect();
    // normal equations, 3x3
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for (f, y) in feats.iter().zip(&ys) {
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += f[i] * f[j];
            }
            aty[i] += f[i] * y;
        }
    }
    let beta = solve3(ata, aty);
    move |r: &CtgRecord| {
        let f = record_features(r);
        beta[0] * f[0] + beta[1] * f[1] + beta[2] * f[2]
    }
}

fn record_features(r: &CtgRecord) -> [f64; 3] {
    let n = r.fhr.len() as f64;
    let mean = r.fhr.iter().sum::<f64>() / n;
    let mad = r
        .fhr
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .sum::<f64>()
        / (n - 1.0);
    [1.0, mean, mad]
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    // Gaussian elimination with partial pivoting.
    for col in 0..3 {
        let mut piv = col;
        for r in col + 1..3 {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        for r in 0..3 {
            if r == col || d == 0.0 {
                continue;
            }
            let f = a[r][col] / d;
            for c in 0..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for i in 0..3 {
        x[i] = if a[i][i] != 0.0 { b[i] / a[i][i] } else { 0.0 };
    }
    x
}
