//! CTG domain types, record ingestion, screening, and cohort splitting.
//!
//! Cohort files are UTF-8 line-delimited JSON, one record per line.
//! Malformed lines are counted and skipped, never silently dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of samples (2 Hz) a record needs to pass screening.
pub const SCREEN_MIN_SAMPLES: usize = 1800;
/// Maximum gestational age accepted by screening: 42 weeks.
pub const SCREEN_MAX_AGE_DAYS: i64 = 294;
/// Physiological clamp range applied to FHR on ingestion, bpm.
pub const FHR_CLAMP: (f64, f64) = (30.0, 250.0);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutcomeFlags {
    pub premature: bool,
    pub low_birth_weight: bool,
    pub neonatal_asphyxia: bool,
    pub fetal_distress: bool,
    pub malformation: bool,
    pub congenital_heart_disease: bool,
}

impl OutcomeFlags {
    pub fn any(&self) -> bool {
        self.premature
            || self.low_birth_weight
            || self.neonatal_asphyxia
            || self.fetal_distress
            || self.malformation
            || self.congenital_heart_disease
    }

    pub const LABELS: [&'static str; 6] = [
        "premature",
        "low_birth_weight",
        "neonatal_asphyxia",
        "fetal_distress",
        "malformation",
        "congenital_heart_disease",
    ];

    pub fn get(&self, label: &str) -> Option<bool> {
        match label {
            "premature" => Some(self.premature),
            "low_birth_weight" => Some(self.low_birth_weight),
            "neonatal_asphyxia" => Some(self.neonatal_asphyxia),
            "fetal_distress" => Some(self.fetal_distress),
            "congenital_heart_disease" => Some(self.congenital_heart_disease),
            "malformation" => Some(self.malformation),
            _ => None,
        }
    }

    pub fn set(&mut self, label: &str, v: bool) -> bool {
        match label {
            "premature" => self.premature = v,
            "low_birth_weight" => self.low_birth_weight = v,
            "neonatal_asphyxia" => self.neonatal_asphyxia = v,
            "fetal_distress" => self.fetal_distress = v,
            "congenital_heart_disease" => self.congenital_heart_disease = v,
            "malformation" => self.malformation = v,
            _ => return false,
        }
        true
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaternalFlags {
    pub gdm: bool,
    pub anaemia: bool,
    pub maternal_congenital: bool,
    pub umbilical_cord: bool,
    pub placental_lesion: bool,
}

impl MaternalFlags {
    pub fn any(&self) -> bool {
        self.gdm
            || self.anaemia
            || self.maternal_congenital
            || self.umbilical_cord
            || self.placental_lesion
    }

    pub const LABELS: [&'static str; 5] = [
        "gdm",
        "anaemia",
        "maternal_congenital",
        "umbilical_cord",
        "placental_lesion",
    ];

    pub fn set(&mut self, label: &str, v: bool) -> bool {
        match label {
            "gdm" => self.gdm = v,
            "anaemia" => self.anaemia = v,
            "maternal_congenital" => self.maternal_congenital = v,
            "umbilical_cord" => self.umbilical_cord = v,
            "placental_lesion" => self.placental_lesion = v,
            _ => return false,
        }
        true
    }

    pub fn get(&self, label: &str) -> Option<bool> {
        match label {
            "gdm" => Some(self.gdm),
            "anaemia" => Some(self.anaemia),
            "maternal_congenital" => Some(self.maternal_congenital),
            "umbilical_cord" => Some(self.umbilical_cord),
            "placental_lesion" => Some(self.placental_lesion),
            _ => None,
        }
    }
}

/// One monitoring session: FHR at 2 Hz plus labels and flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtgRecord {
    pub record_id: String,
    pub subject_id: String,
    pub fhr: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ua: Option<Vec<f64>>,
    pub actual_age_days: i64,
    #[serde(default)]
    pub outcomes: OutcomeFlags,
    #[serde(default)]
    pub maternal: MaternalFlags,
}

impl CtgRecord {
    /// A record is "all normal" when no outcome or maternal flag is set.
    pub fn is_normal(&self) -> bool {
        !self.outcomes.any() && !self.maternal.any()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Split assignment for one record. Test records are also part of the
/// clinical evaluation cohort, so the two marks are independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Assignment {
    pub split: Option<Split>,
    pub clinical_eval: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Cohort {
    pub records: Vec<CtgRecord>,
    /// record_id -> assignment; covers exactly the screened records after
    /// [`split_cohort`].
    pub split_of: BTreeMap<String, Assignment>,
    pub seed: u64,
}

/// Counts from one [`load_cohort`] pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub loaded: usize,
    pub clamped_values: usize,
    pub rejected_lines: usize,
}

fn clamp_fhr(fhr: &mut [f64], clamped: &mut usize) {
    for v in fhr.iter_mut() {
        if *v < FHR_CLAMP.0 {
            *v = FHR_CLAMP.0;
            *clamped += 1;
        } else if *v > FHR_CLAMP.1 {
            *v = FHR_CLAMP.1;
            *clamped += 1;
        }
    }
}

fn record_valid(r: &CtgRecord) -> bool {
    !r.fhr.is_empty()
        && r.fhr.iter().all(|v| v.is_finite())
        && r.actual_age_days > 0
        && r.ua.as_ref().map_or(true, |u| u.len() == r.fhr.len())
}

/// Load a line-delimited JSON cohort file. Malformed or invariant-violating
/// lines are rejected and counted.
pub fn load_cohort(path: impl AsRef<Path>) -> Result<(Cohort, ParseReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = std::io::BufReader::new(file);
    let mut report = ParseReport::default();
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CtgRecord>(&line) {
            Ok(mut rec) => {
                if !record_valid(&rec) || !seen.insert(rec.record_id.clone()) {
                    report.rejected_lines += 1;
                    continue;
                }
                clamp_fhr(&mut rec.fhr, &mut report.clamped_values);
                report.loaded += 1;
                records.push(rec);
            }
            Err(_) => report.rejected_lines += 1,
        }
    }
    Ok((
        Cohort {
            records,
            split_of: BTreeMap::new(),
            seed: 0,
        },
        report,
    ))
}

pub fn write_cohort(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for rec in &cohort.records {
        let line = serde_json::to_string(rec).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Screening rule: at least 1800 samples (15 min at 2 Hz) and gestational
/// age at most 42 weeks.
pub fn screen(record: &CtgRecord) -> bool {
    record.fhr.len() >= SCREEN_MIN_SAMPLES && record.actual_age_days <= SCREEN_MAX_AGE_DAYS
}

/// Partition all-normal subjects into Train/Val/Test at the given ratios
/// (subject-level, so one subject's sessions never straddle splits), and
/// mark flagged records plus Test records as the clinical evaluation
/// cohort. Deterministic per seed. Records failing [`screen`] receive no
/// assignment.
pub fn split_cohort(cohort: &mut Cohort, seed: u64, ratios: (u32, u32, u32)) -> Result<()> {
    if ratios.0 == 0 || ratios.1 == 0 || ratios.2 == 0 {
        return Err(Error::Config("split ratios must be positive".into()));
    }
    let screened: Vec<&CtgRecord> = cohort.records.iter().filter(|r| screen(r)).collect();

    // subject -> all-normal? (a subject with any flagged record is excluded
    // from Train/Val/Test entirely; its records go to ClinicalEval)
    let mut normal_subjects: BTreeMap<&str, bool> = BTreeMap::new();
    for r in &screened {
        let e = normal_subjects.entry(&r.subject_id).or_insert(true);
        *e &= r.is_normal();
    }
    let mut normals: Vec<&str> = normal_subjects
        .iter()
        .filter(|(_, ok)| **ok)
        .map(|(s, _)| *s)
        .collect();
    if normals.len() < 10 {
        return Err(Error::Sizing(format!(
            "need at least 10 all-normal subjects to split 8:1:1, have {}",
            normals.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_C0DE);
    normals.shuffle(&mut rng);

    let total = (ratios.0 + ratios.1 + ratios.2) as usize;
    let n = normals.len();
    let n_train = n * ratios.0 as usize / total;
    let n_val = n * ratios.1 as usize / total;
    let mut split_by_subject: BTreeMap<&str, Split> = BTreeMap::new();
    for (i, s) in normals.iter().enumerate() {
        let sp = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        split_by_subject.insert(s, sp);
    }

    let mut split_of = BTreeMap::new();
    for r in &screened {
        let split = if r.is_normal() {
            split_by_subject.get(r.subject_id.as_str()).copied()
        } else {
            None
        };
        let clinical_eval = split == Some(Split::Test) || split.is_none();
        split_of.insert(
            r.record_id.clone(),
            Assignment {
                split,
                clinical_eval,
            },
        );
    }
    cohort.split_of = split_of;
    cohort.seed = seed;
    Ok(())
}

/// Write `record_id,split` CSV. ClinicalEval-only records get split
/// `clinical_eval`; Test records appear as `test` (they are implicitly
/// clinical-eval too).
pub fn write_split_csv(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "record_id,split").map_err(|e| Error::io(path.display().to_string(), e))?;
    for (rid, a) in &cohort.split_of {
        let s = match a.split {
            Some(sp) => sp.as_str(),
            None => "clinical_eval",
        };
        writeln!(w, "{rid},{s}").map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

impl Cohort {
    pub fn records_in(&self, split: Split) -> Vec<&CtgRecord> {
        self.records
            .iter()
            .filter(|r| {
                self.split_of
                    .get(&r.record_id)
                    .is_some_and(|a| a.split == Some(split))
            })
            .collect()
    }

    pub fn clinical_eval_records(&self) -> Vec<&CtgRecord> {
        self.records
            .iter()
            .filter(|r| {
                self.split_of
                    .get(&r.record_id)
                    .is_some_and(|a| a.clinical_eval)
            })
            .collect()
    }
}
