//! Parametric competing-cause survival model with a 26-parameter vector.
//!
//! Each cause `c` (breast cancer, other) has a Weibull-type cumulative hazard
//! `H_c(t | x) = exp(a_c) * t^b_c * exp(eta_c(x))` and survival to `t` is
//! `exp(-H_bc - H_oth)`. The layout of the vector is fixed by [`NAMES`].

use std::fs;
use std::path::Path;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cohort::{map_to_baseline_input, BaselineInput, ChemoRegimen, Cohort, Grade, MappingProfile};
use crate::error::{Error, Result};
use crate::metrics::Objective;
use crate::optimize::{nelder_mead, NMConfig};

pub const N_PARAMS: usize = 26;
pub const LAYOUT_VERSION: u32 = 1;

pub const NAMES: [&str; N_PARAMS] = [
    "bc_log_scale",
    "bc_shape",
    "bc_age",
    "bc_age_sq",
    "bc_log_size",
    "bc_log_size_sq",
    "bc_log_nodes",
    "bc_nodes",
    "bc_grade2",
    "bc_grade3",
    "bc_er",
    "bc_pr",
    "bc_her2",
    "bc_ki67",
    "bc_detection",
    "tx_chemo",
    "tx_hormone",
    "tx_trastuzumab",
    "tx_radiotherapy",
    "tx_bisphosphonate",
    "oth_log_scale",
    "oth_shape",
    "oth_age",
    "oth_smoker",
    "oth_heart_dose",
    "oth_radiotherapy",
];

pub const BC_LOG_SCALE: usize = 0;
pub const BC_SHAPE: usize = 1;
pub const BC_FIRST_COEF: usize = 2;
pub const BC_TERMS: usize = 18;
pub const OTH_LOG_SCALE: usize = 20;
pub const OTH_SHAPE: usize = 21;
pub const OTH_FIRST_COEF: usize = 22;
pub const OTH_TERMS: usize = 4;

/// Reference centres for the continuous covariates (cohort medians of age and
/// tumour size).
pub const AGE_CENTER: f64 = 64.2;
pub const SIZE_CENTER_MM: f64 = 15.0;

/// Chemotherapy term value of a standard-anthracycline regimen relative to a
/// taxane or high-dose regimen.
pub const STANDARD_ANTHRACYCLINE_EFFECT: f64 = 0.75;

/// Index of a named parameter.
pub fn param_index(name: &str) -> Option<usize> {
    NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParamVector(pub [f64; N_PARAMS]);

impl BaselineParamVector {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; N_PARAMS] = values
            .try_into()
            .map_err(|_| Error::Length { expected: N_PARAMS, found: values.len() })?;
        let p = BaselineParamVector(arr);
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in NAMES.iter().zip(self.0.iter()) {
            if !v.is_finite() {
                return Err(Error::Invariant(format!("parameter `{name}` is not finite")));
            }
        }
        for i in [BC_SHAPE, OTH_SHAPE] {
            if self.0[i] <= 0.0 {
                return Err(Error::Invariant(format!("shape parameter `{}` must be > 0", NAMES[i])));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        param_index(name).map(|i| self.0[i])
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = param_index(name).ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        self.0[i] = value;
        Ok(())
    }

    /// Every coefficient zero, both causes with baseline `exp(log_scale) * t^shape`.
    pub fn null(log_scale: f64, shape: f64) -> Self {
        let mut p = [0.0; N_PARAMS];
        p[BC_LOG_SCALE] = log_scale;
        p[BC_SHAPE] = shape;
        p[OTH_LOG_SCALE] = log_scale;
        p[OTH_SHAPE] = shape;
        BaselineParamVector(p)
    }

    /// The shipped "pretrained" parameterization.
    pub fn reference() -> Self {
        BaselineParamVector([
            -5.2,  // bc_log_scale
            1.1,   // bc_shape
            0.10,  // bc_age (per decade)
            0.03,  // bc_age_sq
            0.50,  // bc_log_size
            0.05,  // bc_log_size_sq
            0.60,  // bc_log_nodes
            0.10,  // bc_nodes (per 10 nodes)
            0.45,  // bc_grade2
            0.90,  // bc_grade3
            -0.30, // bc_er
            -0.20, // bc_pr
            0.20,  // bc_her2
            0.15,  // bc_ki67
            -0.25, // bc_detection
            -0.30, // tx_chemo
            -0.35, // tx_hormone
            -0.30, // tx_trastuzumab
            -0.15, // tx_radiotherapy
            -0.10, // tx_bisphosphonate
            -7.5,  // oth_log_scale
            1.2,   // oth_shape
            0.70,  // oth_age (per decade)
            0.40,  // oth_smoker
            0.04,  // oth_heart_dose (per Gy)
            0.05,  // oth_radiotherapy
        ])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Arithmetic mean of several parameter vectors.
    pub fn average(vectors: &[BaselineParamVector]) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::Config("cannot average zero parameter vectors".into()));
        }
        let mut acc = [0.0; N_PARAMS];
        for v in vectors {
            for (a, x) in acc.iter_mut().zip(v.0.iter()) {
                *a += x;
            }
        }
        for a in acc.iter_mut() {
            *a /= vectors.len() as f64;
        }
        Ok(BaselineParamVector(acc))
    }
}

impl Serialize for BaselineParamVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        struct Params<'a>(&'a [f64; N_PARAMS]);
        impl Serialize for Params<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut m = s.serialize_map(Some(N_PARAMS))?;
                for (name, v) in NAMES.iter().zip(self.0.iter()) {
                    m.serialize_entry(name, v)?;
                }
                m.end()
            }
        }
        let mut m = serializer.serialize_map(Some(2))?;
        m.serialize_entry("layout_version", &LAYOUT_VERSION)?;
        m.serialize_entry("params", &Params(&self.0))?;
        m.end()
    }
}

#[derive(Deserialize)]
struct ParamFile {
    layout_version: u32,
    params: std::collections::BTreeMap<String, f64>,
}

impl ParamFile {
    fn into_vector(self) -> Result<BaselineParamVector> {
        if self.layout_version != LAYOUT_VERSION {
            return Err(Error::Config(format!("unsupported layout_version {}", self.layout_version)));
        }
        if self.params.len() != N_PARAMS {
            return Err(Error::Length { expected: N_PARAMS, found: self.params.len() });
        }
        let mut values = [0.0; N_PARAMS];
        for (name, v) in &self.params {
            let i = param_index(name).ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
            values[i] = *v;
        }
        let p = BaselineParamVector(values);
        p.validate()?;
        Ok(p)
    }
}

impl<'de> Deserialize<'de> for BaselineParamVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        ParamFile::deserialize(deserializer)?.into_vector().map_err(D::Error::custom)
    }
}

pub fn load_params(path: &Path) -> Result<BaselineParamVector> {
    let text = fs::read_to_string(path)?;
    let file: ParamFile = serde_json::from_str(&text)?;
    file.into_vector()
}

pub fn save_params(p: &BaselineParamVector, path: &Path) -> Result<()> {
    p.validate()?;
    fs::write(path, serde_json::to_string_pretty(p)?)?;
    Ok(())
}

/// A survival probability at a horizon from one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPrediction {
    pub prob: Option<f64>,
    pub valid: bool,
    pub missing_mandatory: Vec<String>,
    pub model_tag: String,
}

impl SurvivalPrediction {
    pub fn valid(prob: f64, model_tag: impl Into<String>) -> Self {
        SurvivalPrediction { prob: Some(prob), valid: true, missing_mandatory: Vec::new(), model_tag: model_tag.into() }
    }

    pub fn invalid(missing: Vec<String>, model_tag: impl Into<String>) -> Self {
        debug_assert!(!missing.is_empty());
        SurvivalPrediction { prob: None, valid: false, missing_mandatory: missing, model_tag: model_tag.into() }
    }
}

/// Mandatory inputs that are missing, in a fixed order.
pub fn validity_check(x: &BaselineInput) -> Vec<String> {
    let mut missing = Vec::new();
    if x.size_mm.is_none() {
        missing.push("size_mm".to_string());
    }
    if x.grade.is_none() {
        missing.push("grade".to_string());
    }
    if x.nodes.is_none() {
        missing.push("nodes".to_string());
    }
    if x.radiotherapy.is_none() {
        missing.push("radiotherapy".to_string());
    }
    if x.er.is_none() {
        missing.push("er".to_string());
    }
    missing
}

/// Covariate terms of one input, aligned with the coefficient blocks of the
/// parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignRow {
    pub bc: [f64; BC_TERMS],
    pub oth: [f64; OTH_TERMS],
}

impl DesignRow {
    /// `None` when a mandatory input is missing.
    pub fn from_input(x: &BaselineInput) -> Option<Self> {
        let size = x.size_mm?;
        let grade = x.grade?;
        let mut nodes = x.nodes?;
        let rt = x.radiotherapy?;
        let er = x.er?;
        if x.micrometastases_half_node && nodes == 1.0 {
            nodes = 0.5;
        }
        let age = (x.age - AGE_CENTER) / 10.0;
        let log_size = (size / SIZE_CENTER_MM).ln();
        let b = |v: bool| if v { 1.0 } else { 0.0 };
        let chemo = match x.chemo_regimen {
            _ if !x.chemo_tx => 0.0,
            ChemoRegimen::TaxaneOrHighdose => 1.0,
            ChemoRegimen::StandardAnthracycline => STANDARD_ANTHRACYCLINE_EFFECT,
            ChemoRegimen::None => 0.0,
        };
        Some(DesignRow {
            bc: [
                age,
                age * age,
                log_size,
                log_size * log_size,
                (nodes + 1.0).ln(),
                nodes / 10.0,
                b(grade == Grade::G2),
                b(grade == Grade::G3),
                b(er),
                // PR, HER2 and Ki-67 are optional: a missing value zeroes the term.
                x.pr.map_or(0.0, b),
                x.her2.map_or(0.0, b),
                x.ki67.map_or(0.0, b),
                x.detection_mode,
                chemo,
                b(x.hormone_tx),
                b(x.trastuzumab_tx),
                b(rt),
                b(x.bisphosphonate_tx),
            ],
            oth: [age, b(x.smoker), if rt { x.heart_dose_gy.unwrap_or(0.0) } else { 0.0 }, b(rt)],
        })
    }

    fn bc_eta(&self, p: &BaselineParamVector) -> f64 {
        self.bc.iter().zip(&p.0[BC_FIRST_COEF..BC_FIRST_COEF + BC_TERMS]).map(|(x, c)| x * c).sum()
    }

    fn oth_eta(&self, p: &BaselineParamVector) -> f64 {
        self.oth.iter().zip(&p.0[OTH_FIRST_COEF..OTH_FIRST_COEF + OTH_TERMS]).map(|(x, c)| x * c).sum()
    }

    pub fn bc_cumulative_hazard(&self, p: &BaselineParamVector, t: f64) -> f64 {
        (p.0[BC_LOG_SCALE] + self.bc_eta(p)).exp() * t.powf(p.0[BC_SHAPE])
    }

    pub fn oth_cumulative_hazard(&self, p: &BaselineParamVector, t: f64) -> f64 {
        (p.0[OTH_LOG_SCALE] + self.oth_eta(p)).exp() * t.powf(p.0[OTH_SHAPE])
    }

    pub fn survival(&self, p: &BaselineParamVector, t: f64) -> f64 {
        (-self.bc_cumulative_hazard(p, t) - self.oth_cumulative_hazard(p, t)).exp()
    }

    /// Survival with the offending parameter named when a hazard is not finite.
    pub fn checked_survival(&self, p: &BaselineParamVector, t: f64) -> Result<f64> {
        let h_bc = self.bc_cumulative_hazard(p, t);
        if !h_bc.is_finite() {
            return Err(Error::Numeric { param: dominant_term(p, &self.bc, BC_LOG_SCALE, BC_FIRST_COEF) });
        }
        let h_oth = self.oth_cumulative_hazard(p, t);
        if !h_oth.is_finite() {
            return Err(Error::Numeric { param: dominant_term(p, &self.oth, OTH_LOG_SCALE, OTH_FIRST_COEF) });
        }
        Ok((-h_bc - h_oth).exp())
    }
}

fn dominant_term(p: &BaselineParamVector, terms: &[f64], scale: usize, first: usize) -> String {
    let mut best = (p.0[scale].abs(), scale);
    for (k, x) in terms.iter().enumerate() {
        let c = (p.0[first + k] * x).abs();
        if c > best.0 {
            best = (c, first + k);
        }
    }
    NAMES[best.1].to_string()
}

pub const MODEL_TAG: &str = "baseline";

pub fn predict_survival(p: &BaselineParamVector, x: &BaselineInput, t: f64) -> Result<SurvivalPrediction> {
    predict_survival_tagged(p, x, t, MODEL_TAG)
}

pub fn predict_survival_tagged(p: &BaselineParamVector, x: &BaselineInput, t: f64, tag: &str) -> Result<SurvivalPrediction> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("prediction horizon must be > 0, got {t}")));
    }
    let missing = validity_check(x);
    if !missing.is_empty() {
        return Ok(SurvivalPrediction::invalid(missing, tag));
    }
    let row = DesignRow::from_input(x).expect("validity checked");
    Ok(SurvivalPrediction::valid(row.checked_survival(p, t)?, tag))
}

/// Predictions for a whole cohort under a mapping profile.
pub fn predict_cohort(p: &BaselineParamVector, cohort: &Cohort, profile: &MappingProfile, t: f64, tag: &str) -> Result<Vec<SurvivalPrediction>> {
    cohort
        .records
        .iter()
        .map(|r| predict_survival_tagged(p, &map_to_baseline_input(r, profile), t, tag))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FineTuneResult {
    pub params: BaselineParamVector,
    pub objective_start: f64,
    pub objective_end: f64,
    /// Best-so-far objective after each Nelder-Mead iteration.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

/// Initial simplex steps: 0.25 for the baseline hazard parameters, 0.05 otherwise.
pub fn default_steps() -> Vec<f64> {
    (0..N_PARAMS)
        .map(|i| if matches!(i, BC_LOG_SCALE | BC_SHAPE | OTH_LOG_SCALE | OTH_SHAPE) { 0.25 } else { 0.05 })
        .collect()
}

pub fn default_nm_config() -> NMConfig {
    NMConfig { steps: default_steps(), ..NMConfig::default() }
}

/// Loss of a parameter vector on the valid records of a design (ICI, or
/// negated AUC). Invalid parameter vectors or undefined metrics give `+inf`.
pub fn objective_value(p: &BaselineParamVector, rows: &[DesignRow], times: &[f64], events: &[bool], objective: Objective, t: f64) -> f64 {
    if p.0[BC_SHAPE] <= 0.0 || p.0[OTH_SHAPE] <= 0.0 {
        return f64::INFINITY;
    }
    let mut preds = Vec::with_capacity(rows.len());
    for row in rows {
        let s = row.survival(p, t);
        if !s.is_finite() {
            return f64::INFINITY;
        }
        preds.push(s);
    }
    objective.loss(&preds, times, events, t).unwrap_or(f64::INFINITY)
}

/// Re-optimize all 26 parameters on `train` with Nelder-Mead, starting from `p0`.
pub fn fine_tune(
    p0: &BaselineParamVector,
    train: &Cohort,
    profile: &MappingProfile,
    objective: Objective,
    t: f64,
    nm: &NMConfig,
) -> Result<FineTuneResult> {
    p0.validate()?;
    let mut rows = Vec::new();
    let mut times = Vec::new();
    let mut events = Vec::new();
    for r in &train.records {
        if let Some(row) = DesignRow::from_input(&map_to_baseline_input(r, profile)) {
            rows.push(row);
            times.push(r.time);
            events.push(r.event);
        }
    }
    let n_events = events.iter().filter(|e| **e).count();
    if n_events < 2 {
        return Err(Error::Fit(format!("fine-tuning needs at least 2 events among valid records, found {n_events}")));
    }
    let f = |x: &[f64]| {
        let p = BaselineParamVector(x.try_into().expect("26 parameters"));
        objective_value(&p, &rows, &times, &events, objective, t)
    };
    let start = f(&p0.0);
    if !start.is_finite() {
        return Err(Error::Fit("objective is undefined at the starting parameters".into()));
    }
    let res = nelder_mead(f, &p0.0, nm)?;
    Ok(FineTuneResult {
        params: BaselineParamVector(res.x.as_slice().try_into().expect("26 parameters")),
        objective_start: start,
        objective_end: res.fx,
        trace: res.trace,
        evaluations: res.evaluations,
    })
}
