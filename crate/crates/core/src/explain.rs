//! Model-agnostic Shapley values by Monte Carlo permutation sampling.
//!
//! The explained quantity is the survival probability at the horizon, and the
//! players are the eleven record covariates. A composite record takes the
//! features preceding `j` in a random permutation from the explained record
//! and the remaining ones from a random background record.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Covariate, PatientRecord};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapConfig {
    /// Monte Carlo draws per feature.
    pub samples: usize,
    /// Maximum background records (sampled from the supplied pool).
    pub background: usize,
    /// Give up after this many invalid composites per valid draw.
    pub max_skip_ratio: usize,
    pub seed: u64,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig { samples: 200, background: 500, max_skip_ratio: 50, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapResult {
    pub record_id: u64,
    pub features: Vec<Covariate>,
    pub phi: Vec<f64>,
    /// Monte Carlo standard error of each `phi`.
    pub se: Vec<f64>,
    /// Mean model output over the valid background records.
    pub base_value: f64,
    pub output: f64,
    pub samples: usize,
    /// Composites the model could not score, resampled.
    pub skipped: usize,
}

/// Draw up to `k` background records without replacement.
pub fn sample_background(pool: &[PatientRecord], k: usize, seed: u64) -> Vec<PatientRecord> {
    if pool.len() <= k {
        return pool.to_vec();
    }
    let mut r = rng::seeded(seed);
    rand::seq::index::sample(&mut r, pool.len(), k).into_iter().map(|i| pool[i].clone()).collect()
}

/// Shapley values of `f` at `x` against `background`.
pub fn shap_values<F>(f: &F, x: &PatientRecord, background: &[PatientRecord], m: usize, seed: u64) -> Result<ShapResult>
where
    F: Fn(&PatientRecord) -> Option<f64> + ?Sized,
{
    shap_values_with(f, x, background, &ShapConfig { samples: m, seed, ..ShapConfig::default() })
}

pub fn shap_values_with<F>(f: &F, x: &PatientRecord, background: &[PatientRecord], cfg: &ShapConfig) -> Result<ShapResult>
where
    F: Fn(&PatientRecord) -> Option<f64> + ?Sized,
{
    let m = cfg.samples;
    if m < 1 {
        return Err(Error::Config("SHAP needs at least one sample".into()));
    }
    if background.is_empty() {
        return Err(Error::Config("SHAP needs a nonempty background".into()));
    }
    let output = f(x).ok_or_else(|| Error::Domain(format!("model has no prediction for record {}", x.id)))?;
    let base: Vec<f64> = background.iter().filter_map(f).collect();
    if base.is_empty() {
        return Err(Error::Domain("model has no prediction for any background record".into()));
    }
    let base_value = base.iter().sum::<f64>() / base.len() as f64;

    let feats = Covariate::ALL.to_vec();
    let mut rng = rng::stream(cfg.seed, x.id);
    let mut phi = Vec::with_capacity(feats.len());
    let mut se = Vec::with_capacity(feats.len());
    let mut skipped = 0usize;
    let mut perm: Vec<usize> = (0..feats.len()).collect();
    for j in 0..feats.len() {
        let mut draws = Vec::with_capacity(m);
        let mut attempts = 0usize;
        while draws.len() < m {
            attempts += 1;
            if attempts > m * cfg.max_skip_ratio.max(1) {
                return Err(Error::Domain(format!(
                    "too many invalid composites while attributing `{}`",
                    feats[j].name()
                )));
            }
            perm.shuffle(&mut rng);
            let z = &background[rng.random_range(0..background.len())];
            let mut without = z.clone();
            for &k in perm.iter().take_while(|&&k| k != j) {
                without.copy_covariate(x, feats[k]);
            }
            let mut with = without.clone();
            with.copy_covariate(x, feats[j]);
            match (f(&with), f(&without)) {
                (Some(a), Some(b)) => draws.push(a - b),
                _ => skipped += 1,
            }
        }
        let mean = draws.iter().sum::<f64>() / m as f64;
        let var = if m > 1 { draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (m - 1) as f64 } else { 0.0 };
        phi.push(mean);
        se.push((var / m as f64).sqrt());
    }
    Ok(ShapResult { record_id: x.id, features: feats, phi, se, base_value, output, samples: m, skipped })
}

/// Explain several records in parallel.
pub fn shap_many<F>(f: &F, records: &[PatientRecord], background: &[PatientRecord], cfg: &ShapConfig) -> Vec<Result<ShapResult>>
where
    F: Fn(&PatientRecord) -> Option<f64> + Sync,
{
    records.par_iter().map(|r| shap_values_with(f, r, background, cfg)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: Covariate,
    pub mean_abs_shap: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapMatrixRow {
    pub record_id: u64,
    pub feature: Covariate,
    pub shap: f64,
    /// Numeric value of the feature (missing as `None`).
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    pub ranking: Vec<FeatureImportance>,
    pub matrix: Vec<ShapMatrixRow>,
}

/// Rank features by mean absolute attribution. `records` supplies feature
/// values for the matrix and must align with `results`.
pub fn shap_summary(results: &[ShapResult], records: &[PatientRecord]) -> Result<ShapSummary> {
    if results.is_empty() {
        return Err(Error::Config("SHAP summary needs at least one result".into()));
    }
    if results.len() != records.len() {
        return Err(Error::Config("SHAP results and records must align".into()));
    }
    let feats = &results[0].features;
    let mut ranking: Vec<FeatureImportance> = feats
        .iter()
        .enumerate()
        .map(|(j, &feature)| FeatureImportance {
            feature,
            mean_abs_shap: results.iter().map(|r| r.phi[j].abs()).sum::<f64>() / results.len() as f64,
            rank: 0,
        })
        .collect();
    ranking.sort_by(|a, b| b.mean_abs_shap.total_cmp(&a.mean_abs_shap).then(a.feature.cmp(&b.feature)));
    for (i, r) in ranking.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    let matrix = results
        .iter()
        .zip(records)
        .flat_map(|(res, rec)| {
            res.features.iter().zip(&res.phi).map(move |(&feature, &shap)| ShapMatrixRow {
                record_id: res.record_id,
                feature,
                shap,
                value: rec.covariate_value(feature),
            })
        })
        .collect();
    Ok(ShapSummary { ranking, matrix })
}

pub fn write_summary_csv<W: Write>(s: &ShapSummary, mut w: W) -> Result<()> {
    writeln!(w, "feature,mean_abs_shap,rank")?;
    for r in &s.ranking {
        writeln!(w, "{},{},{}", r.feature.name(), r.mean_abs_shap, r.rank)?;
    }
    Ok(())
}

pub fn write_matrix_csv<W: Write>(s: &ShapSummary, mut w: W) -> Result<()> {
    writeln!(w, "record_id,feature,shap,value")?;
    for r in &s.matrix {
        let v = r.value.map_or(String::new(), |v| v.to_string());
        writeln!(w, "{},{},{},{}", r.record_id, r.feature.name(), r.shap, v)?;
    }
    Ok(())
}
