//! Patient records, cohorts and dataset splitting.

mod csv_io;
mod mapping;
mod synth;

pub use csv_io::{ingest_csv, read_csv, write_csv, IngestReport, CSV_HEADER};
pub use mapping::{
    map_to_baseline_input, BaselineInput, ChemoRegimen, MappingProfile, NodalSource,
    PostmenopausalRule,
};
pub use synth::{generate_synthetic, CategoricalMarginals, GeneratorConfig, MissingnessConfig, SyntheticCohort, TrueCoefficients};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodalStage {
    N0,
    N1,
    N2,
    N3,
}

impl NodalStage {
    pub const ALL: [NodalStage; 4] = [NodalStage::N0, NodalStage::N1, NodalStage::N2, NodalStage::N3];

    pub fn label(self) -> &'static str {
        match self {
            NodalStage::N0 => "N0",
            NodalStage::N1 => "N1",
            NodalStage::N2 => "N2",
            NodalStage::N3 => "N3",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Laterality {
    Left,
    Right,
    Bilateral,
}

impl Laterality {
    pub const ALL: [Laterality; 3] = [Laterality::Left, Laterality::Right, Laterality::Bilateral];

    pub fn label(self) -> &'static str {
        match self {
            Laterality::Left => "left",
            Laterality::Right => "right",
            Laterality::Bilateral => "bilateral",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Grade {
    G1,
    G2,
    G3,
}

impl Grade {
    pub const ALL: [Grade; 3] = [Grade::G1, Grade::G2, Grade::G3];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<Grade> {
        match n {
            1 => Some(Grade::G1),
            2 => Some(Grade::G2),
            3 => Some(Grade::G3),
            _ => None,
        }
    }
}

/// The eleven covariates of a record, in CSV column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    Age,
    NodalStage,
    NodeCount,
    Laterality,
    Er,
    Pr,
    SizeMm,
    Grade,
    Radiotherapy,
    Chemotherapy,
    Trastuzumab,
}

impl Covariate {
    pub const ALL: [Covariate; 11] = [
        Covariate::Age,
        Covariate::NodalStage,
        Covariate::NodeCount,
        Covariate::Laterality,
        Covariate::Er,
        Covariate::Pr,
        Covariate::SizeMm,
        Covariate::Grade,
        Covariate::Radiotherapy,
        Covariate::Chemotherapy,
        Covariate::Trastuzumab,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Covariate::Age => "age",
            Covariate::NodalStage => "nodal_stage",
            Covariate::NodeCount => "node_count",
            Covariate::Laterality => "laterality",
            Covariate::Er => "er",
            Covariate::Pr => "pr",
            Covariate::SizeMm => "size_mm",
            Covariate::Grade => "grade",
            Covariate::Radiotherapy => "radiotherapy",
            Covariate::Chemotherapy => "chemotherapy",
            Covariate::Trastuzumab => "trastuzumab",
        }
    }

    /// Continuous covariates (jittered by the smoothed bootstrap).
    pub fn is_numeric(self) -> bool {
        matches!(self, Covariate::Age | Covariate::SizeMm | Covariate::NodeCount)
    }
}

/// Per-record presence mask over [`Covariate::ALL`]; bit set means missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct MissingMask(pub u16);

impl MissingMask {
    pub fn is_missing(self, c: Covariate) -> bool {
        self.0 & (1 << c as u16) != 0
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    /// Stable identifier (row index for ingested data, draw index for synthetic data).
    pub id: u64,
    pub age: f64,
    pub nodal_stage: Option<NodalStage>,
    pub node_count: Option<u32>,
    pub laterality: Option<Laterality>,
    pub er: Option<bool>,
    pub pr: Option<bool>,
    pub size_mm: Option<f64>,
    pub grade: Option<Grade>,
    pub radiotherapy: Option<bool>,
    pub chemotherapy: Option<bool>,
    pub trastuzumab: Option<bool>,
    /// Observed follow-up in years.
    pub time: f64,
    /// Breast-cancer-related death observed at `time`.
    pub event: bool,
}

impl PatientRecord {
    /// A complete record with every covariate present and neutral values.
    pub fn new(id: u64, age: f64, time: f64, event: bool) -> Self {
        PatientRecord {
            id,
            age,
            nodal_stage: Some(NodalStage::N0),
            node_count: None,
            laterality: Some(Laterality::Left),
            er: Some(true),
            pr: Some(true),
            size_mm: Some(15.0),
            grade: Some(Grade::G2),
            radiotherapy: Some(false),
            chemotherapy: Some(false),
            trastuzumab: Some(false),
            time,
            event,
        }
    }

    pub fn missing_mask(&self) -> MissingMask {
        let mut bits = 0u16;
        for c in Covariate::ALL {
            if !self.has(c) {
                bits |= 1 << c as u16;
            }
        }
        MissingMask(bits)
    }

    pub fn has(&self, c: Covariate) -> bool {
        match c {
            Covariate::Age => true,
            Covariate::NodalStage => self.nodal_stage.is_some(),
            Covariate::NodeCount => self.node_count.is_some(),
            Covariate::Laterality => self.laterality.is_some(),
            Covariate::Er => self.er.is_some(),
            Covariate::Pr => self.pr.is_some(),
            Covariate::SizeMm => self.size_mm.is_some(),
            Covariate::Grade => self.grade.is_some(),
            Covariate::Radiotherapy => self.radiotherapy.is_some(),
            Covariate::Chemotherapy => self.chemotherapy.is_some(),
            Covariate::Trastuzumab => self.trastuzumab.is_some(),
        }
    }

    /// Overwrite covariate `c` (value and missingness) with the one from `other`.
    pub fn copy_covariate(&mut self, other: &PatientRecord, c: Covariate) {
        match c {
            Covariate::Age => self.age = other.age,
            Covariate::NodalStage => self.nodal_stage = other.nodal_stage,
            Covariate::NodeCount => self.node_count = other.node_count,
            Covariate::Laterality => self.laterality = other.laterality,
            Covariate::Er => self.er = other.er,
            Covariate::Pr => self.pr = other.pr,
            Covariate::SizeMm => self.size_mm = other.size_mm,
            Covariate::Grade => self.grade = other.grade,
            Covariate::Radiotherapy => self.radiotherapy = other.radiotherapy,
            Covariate::Chemotherapy => self.chemotherapy = other.chemotherapy,
            Covariate::Trastuzumab => self.trastuzumab = other.trastuzumab,
        }
    }

    /// Numeric view of a covariate, used for summaries and plotting.
    pub fn covariate_value(&self, c: Covariate) -> Option<f64> {
        let b = |v: Option<bool>| v.map(|x| if x { 1.0 } else { 0.0 });
        match c {
            Covariate::Age => Some(self.age),
            Covariate::NodalStage => self.nodal_stage.map(|s| s.index() as f64),
            Covariate::NodeCount => self.node_count.map(f64::from),
            Covariate::Laterality => self.laterality.map(|l| l.index() as f64),
            Covariate::Er => b(self.er),
            Covariate::Pr => b(self.pr),
            Covariate::SizeMm => self.size_mm,
            Covariate::Grade => self.grade.map(|g| g.number() as f64),
            Covariate::Radiotherapy => b(self.radiotherapy),
            Covariate::Chemotherapy => b(self.chemotherapy),
            Covariate::Trastuzumab => b(self.trastuzumab),
        }
    }

    /// Check the record-level invariants against a follow-up horizon.
    pub fn validate(&self, horizon: f64) -> Result<()> {
        if !(self.time > 0.0) || !self.time.is_finite() {
            return Err(Error::Invariant(format!("record {}: time must be > 0", self.id)));
        }
        if self.event && self.time > horizon {
            return Err(Error::Invariant(format!(
                "record {}: event at {} beyond horizon {}",
                self.id, self.time, horizon
            )));
        }
        if !(self.age > 0.0) || !self.age.is_finite() {
            return Err(Error::Invariant(format!("record {}: age must be > 0", self.id)));
        }
        if let Some(s) = self.size_mm {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Invariant(format!("record {}: size_mm must be > 0", self.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub records: Vec<PatientRecord>,
    /// Follow-up horizon in years.
    pub horizon: f64,
    pub provenance: String,
}

impl Cohort {
    pub fn new(records: Vec<PatientRecord>, horizon: f64, provenance: impl Into<String>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Sizing("cohort has no records".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be > 0, got {horizon}")));
        }
        for r in &records {
            r.validate(horizon)?;
        }
        Ok(Cohort { records, horizon, provenance: provenance.into() })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn event_count(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.id).collect()
    }

    /// Sub-cohort made of the records at `indices` (same horizon and provenance).
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            horizon: self.horizon,
            provenance: self.provenance.clone(),
        }
    }

    /// Concatenation of two cohorts sharing a horizon.
    pub fn concat(&self, other: &Cohort) -> Cohort {
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Cohort { records, horizon: self.horizon, provenance: self.provenance.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitTriple {
    pub train_a: Cohort,
    pub test_b: Cohort,
    pub valid_c: Cohort,
    pub seed: u64,
}

/// Sizes of the 60/20/20 partition: A and B rounded, C takes the remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let a = (0.6 * n as f64).round() as usize;
    let b = (0.2 * n as f64).round() as usize;
    (a, b, n - a - b)
}

/// Uniform random 60/20/20 partition driven solely by `seed`.
pub fn split_cohort(c: &Cohort, seed: u64) -> Result<SplitTriple> {
    if c.len() < 10 {
        return Err(Error::Sizing(format!("need at least 10 records to split, got {}", c.len())));
    }
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.shuffle(&mut crate::rng::seeded(seed));
    let (a, b, _) = split_sizes(c.len());
    Ok(SplitTriple {
        train_a: c.subset(&order[..a]),
        test_b: c.subset(&order[a..a + b]),
        valid_c: c.subset(&order[a + b..]),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn cohort(n: usize) -> Cohort {
        let records = (0..n)
            .map(|i| PatientRecord::new(i as u64, 50.0 + (i % 30) as f64, 1.0 + (i % 4) as f64, i % 7 == 0))
            .collect();
        Cohort::new(records, 5.0, "test").unwrap()
    }

    #[test]
    fn split_sizes_follow_proportions() {
        assert_eq!(split_sizes(100), (60, 20, 20));
        assert_eq!(split_sizes(7563), (4538, 1513, 1512));
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let c = cohort(100);
        let s1 = split_cohort(&c, 1).unwrap();
        let s2 = split_cohort(&c, 1).unwrap();
        assert_eq!(s1, s2);
        assert_eq!((s1.train_a.len(), s1.test_b.len(), s1.valid_c.len()), (60, 20, 20));
        let mut seen = HashSet::new();
        for r in s1.train_a.records.iter().chain(&s1.test_b.records).chain(&s1.valid_c.records) {
            assert!(seen.insert(r.id));
        }
        assert_eq!(seen.len(), 100);
        let s3 = split_cohort(&c, 2).unwrap();
        assert_ne!(s1.train_a.ids(), s3.train_a.ids());
    }

    #[test]
    fn split_rejects_tiny_cohorts() {
        assert!(matches!(split_cohort(&cohort(9), 0), Err(Error::Sizing(_))));
    }

    #[test]
    fn invariants_are_enforced() {
        let mut r = PatientRecord::new(0, 60.0, 0.0, false);
        assert!(Cohort::new(vec![r.clone()], 5.0, "x").is_err());
        r.time = 6.0;
        r.event = true;
        assert!(Cohort::new(vec![r.clone()], 5.0, "x").is_err());
        r.event = false;
        r.size_mm = Some(-1.0);
        assert!(Cohort::new(vec![r], 5.0, "x").is_err());
        assert!(Cohort::new(vec![], 5.0, "x").is_err());
    }

    #[test]
    fn copy_covariate_moves_missingness() {
        let mut a = PatientRecord::new(0, 60.0, 1.0, false);
        let mut b = a.clone();
        b.grade = None;
        a.copy_covariate(&b, Covariate::Grade);
        assert!(a.missing_mask().is_missing(Covariate::Grade));
        assert_eq!(a.missing_mask().count(), 2); // node_count absent by default
    }
}
