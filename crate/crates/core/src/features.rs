//! Feature encoding for the tree learners.
//!
//! Age and tumour size are min-max normalized on training data, clamped to
//! `[0, 1]` and expanded into a degree-3 Bernstein basis; categorical
//! covariates become level indicators. Missing covariates stay missing across
//! every entry they produce so that trees can route them.

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Grade, Laterality, NodalStage, PatientRecord};
use crate::error::{Error, Result};

pub const BERNSTEIN_DEGREE: usize = 3;

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `B_k(x) = C(d, k) x^k (1 - x)^(d - k)` for `k = 0..=d`.
pub fn bernstein_basis(x01: f64, degree: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&x01) {
        return Err(Error::Domain(format!("Bernstein argument must lie in [0, 1], got {x01}")));
    }
    Ok((0..=degree)
        .map(|k| binomial(degree, k) * x01.powi(k as i32) * (1.0 - x01).powi((degree - k) as i32))
        .collect())
}

/// One encoded record; `None` marks a missing entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub names: Vec<String>,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub version: u32,
    /// Expand age and size into Bernstein blocks; otherwise pass them through raw.
    pub bernstein: bool,
    pub age_min: f64,
    pub age_max: f64,
    pub size_min: f64,
    pub size_max: f64,
}

impl EncoderSpec {
    pub const VERSION: u32 = 1;

    /// Fit min-max bounds on training records.
    pub fn fit(train: &Cohort, bernstein: bool) -> Self {
        let mut age = (f64::INFINITY, f64::NEG_INFINITY);
        let mut size = (f64::INFINITY, f64::NEG_INFINITY);
        for r in &train.records {
            age = (age.0.min(r.age), age.1.max(r.age));
            if let Some(s) = r.size_mm {
                size = (size.0.min(s), size.1.max(s));
            }
        }
        if !size.0.is_finite() {
            size = (0.0, 1.0);
        }
        EncoderSpec { version: Self::VERSION, bernstein, age_min: age.0, age_max: age.1, size_min: size.0, size_max: size.1 }
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for block in ["age", "size_mm"] {
            if self.bernstein {
                names.extend((0..=BERNSTEIN_DEGREE).map(|k| format!("{block}_b{k}")));
            } else {
                names.push(block.to_string());
            }
        }
        names.extend(NodalStage::ALL.iter().map(|s| format!("nodal_{}", s.label())));
        names.push("node_count".into());
        names.extend(Laterality::ALL.iter().map(|l| format!("laterality_{}", l.label())));
        names.push("er".into());
        names.push("pr".into());
        names.extend(Grade::ALL.iter().map(|g| format!("grade_{}", g.number())));
        names.extend(["radiotherapy", "chemotherapy", "trastuzumab"].map(String::from));
        names
    }

    pub fn n_features(&self) -> usize {
        let block = if self.bernstein { BERNSTEIN_DEGREE + 1 } else { 1 };
        2 * block + 4 + 1 + 3 + 2 + 3 + 3
    }

    fn unit(v: f64, lo: f64, hi: f64) -> f64 {
        if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 }
    }

    /// Encode into `out` (length [`n_features`](Self::n_features)), missing as NaN.
    pub fn encode_into(&self, r: &PatientRecord, out: &mut [f64]) {
        let mut i = 0;
        let mut push = |v: f64| {
            out[i] = v;
            i += 1;
        };
        let continuous = |v: Option<f64>, lo: f64, hi: f64, push: &mut dyn FnMut(f64)| match (v, self.bernstein) {
            (Some(v), true) => {
                for b in bernstein_basis(Self::unit(v, lo, hi), BERNSTEIN_DEGREE).expect("clamped") {
                    push(b);
                }
            }
            (Some(v), false) => push(v),
            (None, true) => (0..=BERNSTEIN_DEGREE).for_each(|_| push(f64::NAN)),
            (None, false) => push(f64::NAN),
        };
        continuous(Some(r.age), self.age_min, self.age_max, &mut push);
        continuous(r.size_mm, self.size_min, self.size_max, &mut push);
        let indicator = |present: Option<usize>, levels: usize, push: &mut dyn FnMut(f64)| {
            for k in 0..levels {
                push(present.map_or(f64::NAN, |p| if p == k { 1.0 } else { 0.0 }));
            }
        };
        let flag = |v: Option<bool>| v.map_or(f64::NAN, |b| if b { 1.0 } else { 0.0 });
        indicator(r.nodal_stage.map(NodalStage::index), 4, &mut push);
        push(r.node_count.map_or(f64::NAN, f64::from));
        indicator(r.laterality.map(Laterality::index), 3, &mut push);
        push(flag(r.er));
        push(flag(r.pr));
        indicator(r.grade.map(|g| g.number() as usize - 1), 3, &mut push);
        push(flag(r.radiotherapy));
        push(flag(r.chemotherapy));
        push(flag(r.trastuzumab));
    }

    pub fn encode(&self, r: &PatientRecord) -> FeatureVector {
        let mut buf = vec![0.0; self.n_features()];
        self.encode_into(r, &mut buf);
        FeatureVector {
            names: self.feature_names(),
            values: buf.into_iter().map(|v| if v.is_nan() { None } else { Some(v) }).collect(),
        }
    }

    /// Row-major encoded matrix of a cohort, missing as NaN.
    pub fn encode_cohort(&self, c: &Cohort) -> Vec<Vec<f64>> {
        c.records
            .iter()
            .map(|r| {
                let mut row = vec![0.0; self.n_features()];
                self.encode_into(r, &mut row);
                row
            })
            .collect()
    }
}

/// Encode one record under `spec`.
pub fn encode(r: &PatientRecord, spec: &EncoderSpec) -> FeatureVector {
    spec.encode(r)
}
