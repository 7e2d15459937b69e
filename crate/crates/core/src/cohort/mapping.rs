//! Mapping of cohort records onto the inputs expected by the parametric
//! baseline model.

use serde::{Deserialize, Serialize};

use super::{Grade, Laterality, NodalStage, PatientRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChemoRegimen {
    None,
    StandardAnthracycline,
    TaxaneOrHighdose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineInput {
    pub year_dx: i32,
    pub age: f64,
    pub postmenopausal: bool,
    pub smoker: bool,
    pub er: Option<bool>,
    pub pr: Option<bool>,
    pub her2: Option<bool>,
    pub ki67: Option<bool>,
    pub size_mm: Option<f64>,
    pub grade: Option<Grade>,
    /// 0 symptomatic, 1 screen-detected, 0.5 imputed from the screening age range.
    pub detection_mode: f64,
    pub nodes: Option<f64>,
    pub micrometastases_half_node: bool,
    pub radiotherapy: Option<bool>,
    pub heart_dose_gy: Option<f64>,
    pub hormone_tx: bool,
    pub chemo_tx: bool,
    pub trastuzumab_tx: bool,
    pub bisphosphonate_tx: bool,
    pub chemo_regimen: ChemoRegimen,
}

impl BaselineInput {
    /// Inputs that contradict each other (flagged, not rejected).
    pub fn contradictions(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.trastuzumab_tx && self.her2 == Some(false) {
            out.push("trastuzumab therapy with HER2-negative status".to_string());
        }
        if self.radiotherapy == Some(false) && self.heart_dose_gy.is_some_and(|d| d != 0.0) {
            out.push("heart dose recorded without radiotherapy".to_string());
        }
        out
    }
}

/// How the number of positive nodes is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodalSource {
    /// Approximate from the N stage only (N0 → 0, N1 → 2, N2 → 7, N3 → 10).
    StageApproximation,
    /// Use `node_count` when present and fall back to the stage approximation.
    CountThenStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostmenopausalRule {
    All,
    AgeAtLeast(f64),
}

/// A versioned description of how a data source maps onto baseline inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingProfile {
    pub version: u32,
    pub name: String,
    pub nodal_source: NodalSource,
    pub year_dx: i32,
    pub postmenopausal: PostmenopausalRule,
    /// Regimen assumed whenever chemotherapy was given.
    pub chemo_regimen: ChemoRegimen,
    /// Inclusive age range of the screening programme.
    pub screening_age: (f64, f64),
    pub screened_detection_mode: f64,
    pub heart_dose_left_gy: f64,
    pub heart_dose_right_gy: f64,
    pub heart_dose_bilateral_gy: f64,
    pub heart_dose_unknown_side_gy: f64,
}

impl MappingProfile {
    pub const VERSION: u32 = 1;

    pub fn ma27() -> Self {
        MappingProfile {
            version: Self::VERSION,
            name: "ma27".into(),
            nodal_source: NodalSource::StageApproximation,
            year_dx: 2003,
            postmenopausal: PostmenopausalRule::All,
            chemo_regimen: ChemoRegimen::TaxaneOrHighdose,
            screening_age: (50.0, 75.0),
            screened_detection_mode: 0.5,
            heart_dose_left_gy: 2.0,
            heart_dose_right_gy: 0.0,
            // Unstated for bilateral disease; the left-sided dose is the conservative choice.
            heart_dose_bilateral_gy: 2.0,
            heart_dose_unknown_side_gy: 1.0,
        }
    }

    pub fn seer() -> Self {
        MappingProfile {
            name: "seer".into(),
            nodal_source: NodalSource::CountThenStage,
            postmenopausal: PostmenopausalRule::AgeAtLeast(45.0),
            ..Self::ma27()
        }
    }

    pub fn team() -> Self {
        MappingProfile {
            name: "team".into(),
            nodal_source: NodalSource::CountThenStage,
            chemo_regimen: ChemoRegimen::StandardAnthracycline,
            ..Self::ma27()
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "ma27" => Ok(Self::ma27()),
            "seer" => Ok(Self::seer()),
            "team" => Ok(Self::team()),
            other => Err(Error::Config(format!("unknown mapping profile `{other}`"))),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: MappingProfile = serde_json::from_str(s)?;
        if p.version != Self::VERSION {
            return Err(Error::Config(format!("unsupported mapping profile version {}", p.version)));
        }
        Ok(p)
    }
}

impl Default for MappingProfile {
    fn default() -> Self {
        Self::ma27()
    }
}

pub fn stage_to_nodes(stage: NodalStage) -> f64 {
    match stage {
        NodalStage::N0 => 0.0,
        NodalStage::N1 => 2.0,
        NodalStage::N2 => 7.0,
        NodalStage::N3 => 10.0,
    }
}

/// Total mapping: never fails. Mandatory fields that are absent stay absent so
/// the baseline's validity rules can judge them.
pub fn map_to_baseline_input(r: &PatientRecord, profile: &MappingProfile) -> BaselineInput {
    let staged = r.nodal_stage.map(stage_to_nodes);
    let nodes = match profile.nodal_source {
        NodalSource::StageApproximation => staged,
        NodalSource::CountThenStage => r.node_count.map(f64::from).or(staged),
    };
    let (lo, hi) = profile.screening_age;
    let detection_mode = if r.age >= lo && r.age <= hi { profile.screened_detection_mode } else { 0.0 };
    let heart_dose_gy = r.radiotherapy.map(|rt| {
        if !rt {
            return 0.0;
        }
        match r.laterality {
            Some(Laterality::Left) => profile.heart_dose_left_gy,
            Some(Laterality::Right) => profile.heart_dose_right_gy,
            Some(Laterality::Bilateral) => profile.heart_dose_bilateral_gy,
            None => profile.heart_dose_unknown_side_gy,
        }
    });
    let trastuzumab = r.trastuzumab.unwrap_or(false);
    let chemo = r.chemotherapy.unwrap_or(false);
    BaselineInput {
        year_dx: profile.year_dx,
        age: r.age,
        postmenopausal: match profile.postmenopausal {
            PostmenopausalRule::All => true,
            PostmenopausalRule::AgeAtLeast(a) => r.age >= a,
        },
        smoker: false,
        er: r.er,
        pr: r.pr,
        her2: Some(trastuzumab),
        ki67: None,
        size_mm: r.size_mm,
        grade: r.grade,
        detection_mode,
        nodes,
        micrometastases_half_node: false,
        radiotherapy: r.radiotherapy,
        heart_dose_gy,
        hormone_tx: true,
        chemo_tx: chemo,
        trastuzumab_tx: trastuzumab,
        bisphosphonate_tx: false,
        chemo_regimen: if chemo { profile.chemo_regimen } else { ChemoRegimen::None },
    }
}
