//! The repeated split / tune / refit / validate protocol.
//!
//! Per seed: split 60/20/20 into A, B and C, grid-search the forest and the
//! booster (fit on A, score on B), fine-tune the baseline on A, search the
//! ensemble weights on B, refit everything on A+B, and score the five models
//! on C. Seeds are then aggregated and final models fitted on all records.

mod bundle;
mod grid;
mod report;

pub use bundle::*;
pub use grid::*;
pub use report::*;

use std::collections::HashSet;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baseline::{fine_tune, predict_cohort, BaselineParamVector};
use crate::boost::{fit_booster, BoostHyperparams};
use crate::cohort::{generate_synthetic, ingest_csv, split_cohort, Cohort, GeneratorConfig, MappingProfile, SplitTriple};
use crate::ensemble::{search_weights, ComponentPredictions, EnsembleWeights};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestHyperparams};
use crate::metrics::Objective;
use crate::optimize::{BOConfig, NMConfig};
use crate::rebalance::{rose_resample, RoseConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CohortSource {
    Synthetic { generator: GeneratorConfig, seed: u64 },
    Csv { path: PathBuf },
}

impl Default for CohortSource {
    fn default() -> Self {
        CohortSource::Synthetic { generator: GeneratorConfig::default(), seed: 2024 }
    }
}

impl CohortSource {
    pub fn load(&self, horizon: f64) -> Result<Cohort> {
        let cohort = match self {
            CohortSource::Synthetic { generator, seed } => {
                if generator.horizon != horizon {
                    return Err(Error::Config(format!(
                        "generator horizon {} differs from the experiment horizon {horizon}",
                        generator.horizon
                    )));
                }
                generate_synthetic(generator, *seed)?.cohort
            }
            CohortSource::Csv { path } => ingest_csv(path, horizon)?.0,
        };
        let mut seen = HashSet::with_capacity(cohort.len());
        if let Some(r) = cohort.records.iter().find(|r| !seen.insert(r.id)) {
            return Err(Error::Config(format!("duplicate record id {}", r.id)));
        }
        Ok(cohort)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub cohort: CohortSource,
    pub objective: Objective,
    pub horizon: f64,
    /// Apply ROSE to the fitting folds of the forest and the booster.
    pub rebalance: bool,
    /// ROSE settings; the seed is derived per split.
    pub rose: RoseConfig,
    pub forest_grid: ForestGrid,
    pub boost_grid: BoostGrid,
    pub seeds: Vec<u64>,
    /// Bootstrap resamples for confidence intervals.
    pub bootstrap: usize,
    /// Mapping profile name for the baseline inputs.
    pub profile: String,
    /// Pretrained baseline parameters (the fine-tuning start).
    pub pretrained: BaselineParamVector,
    pub nelder_mead: NMConfig,
    /// Objective evaluations of the ensemble weight search.
    pub bo_evaluations: usize,
    /// Not part of the configuration hash.
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            cohort: CohortSource::default(),
            objective: Objective::Ici,
            horizon: 5.0,
            rebalance: false,
            rose: RoseConfig::default(),
            forest_grid: ForestGrid::default(),
            boost_grid: BoostGrid::default(),
            seeds: (0..10).collect(),
            bootstrap: 1000,
            profile: "ma27".into(),
            pretrained: BaselineParamVector::reference(),
            nelder_mead: crate::baseline::default_nm_config(),
            bo_evaluations: 60,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Config(format!("horizon must be > 0, got {}", self.horizon)));
        }
        if self.bootstrap == 0 {
            return Err(Error::Config("bootstrap needs at least one resample".into()));
        }
        if self.bo_evaluations < EnsembleWeights::seed_points().len() {
            return Err(Error::Config("too few ensemble weight evaluations".into()));
        }
        self.forest_grid.validate()?;
        self.boost_grid.validate()?;
        self.pretrained.validate()?;
        self.nelder_mead.validate(self.pretrained.0.len())?;
        self.mapping_profile()?;
        Ok(())
    }

    pub fn mapping_profile(&self) -> Result<MappingProfile> {
        MappingProfile::by_name(&self.profile)
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let canon = ExperimentConfig { output_dir: None, ..self.clone() };
        let json = serde_json::to_string(&canon).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn bo_config(&self, seed: u64) -> BOConfig {
        BOConfig { evaluations: self.bo_evaluations, ..BOConfig::new(vec![(0.0, 1.0), (0.0, 1.0)], seed) }
    }

    fn rebalanced(&self, fit: &Cohort, seed: u64, stage: u64) -> Result<Cohort> {
        if !self.rebalance {
            return Ok(fit.clone());
        }
        let cfg = RoseConfig { seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stage, ..self.rose.clone() };
        rose_resample(fit, &cfg)
    }
}

/// Summary of one Nelder-Mead fine-tune.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneSummary {
    pub objective_start: f64,
    pub objective_end: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub a: usize,
    pub b: usize,
    pub c: usize,
    /// Records the ML models were fitted on at the A stage (after ROSE, if enabled).
    pub fit_a: usize,
    pub fit_ab: usize,
}

/// Everything one seed produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub counts: SplitCounts,
    pub forest_grid: GridResult<ForestHyperparams>,
    pub boost_grid: GridResult<BoostHyperparams>,
    pub finetune_a: FineTuneSummary,
    pub finetune_ab: FineTuneSummary,
    /// Baseline parameters fine-tuned on A+B.
    pub finetuned: BaselineParamVector,
    pub weights: EnsembleWeights,
    pub weight_loss: f64,
    pub vertex_losses: [f64; 3],
    /// Metrics on C.
    pub metrics: Vec<MetricRow>,
    /// C records without a valid baseline prediction.
    pub invalid_c: usize,
    /// Predictions on C, with outcomes for export.
    #[serde(skip)]
    pub predictions: Option<(ModelPredictions, Vec<f64>, Vec<bool>)>,
}

fn id_set(c: &Cohort) -> HashSet<u64> {
    c.records.iter().map(|r| r.id).collect()
}

/// Structural no-leakage check: A, B and C partition the cohort.
pub fn check_split(cohort: &Cohort, split: &SplitTriple) -> Result<()> {
    let (a, b, c) = (id_set(&split.train_a), id_set(&split.test_b), id_set(&split.valid_c));
    if a.len() != split.train_a.len() || b.len() != split.test_b.len() || c.len() != split.valid_c.len() {
        return Err(Error::Leakage("a split fold contains a record twice".into()));
    }
    if !a.is_disjoint(&b) || !a.is_disjoint(&c) || !b.is_disjoint(&c) {
        return Err(Error::Leakage("split folds overlap".into()));
    }
    if a.len() + b.len() + c.len() != cohort.len() || !id_set(cohort).iter().all(|id| a.contains(id) || b.contains(id) || c.contains(id)) {
        return Err(Error::Leakage("split folds do not cover the cohort".into()));
    }
    Ok(())
}

/// Every record of `fit` comes from `allowed` and none from `held_out`.
pub fn check_fit_set(fit: &Cohort, allowed: &HashSet<u64>, held_out: &HashSet<u64>, what: &str) -> Result<()> {
    for r in &fit.records {
        if held_out.contains(&r.id) {
            return Err(Error::Leakage(format!("{what}: record {} is held out", r.id)));
        }
        if !allowed.contains(&r.id) {
            return Err(Error::Leakage(format!("{what}: record {} is not in the fitting folds", r.id)));
        }
    }
    Ok(())
}

fn with_seed(e: Error, seed: u64) -> Error {
    let tag = |m: String| format!("seed {seed}: {m}");
    match e {
        Error::Config(m) => Error::Config(tag(m)),
        Error::Sizing(m) => Error::Sizing(tag(m)),
        Error::Domain(m) => Error::Domain(tag(m)),
        Error::Invariant(m) => Error::Invariant(tag(m)),
        Error::Fit(m) => Error::Fit(tag(m)),
        Error::UndefinedMetric(m) => Error::UndefinedMetric(tag(m)),
        Error::Leakage(m) => Error::Leakage(tag(m)),
        other => other,
    }
}

/// One repetition of the protocol on `cohort`.
pub fn run_seed(cfg: &ExperimentConfig, cohort: &Cohort, seed: u64) -> Result<SeedResult> {
    run_seed_inner(cfg, cohort, seed).map_err(|e| with_seed(e, seed))
}

fn run_seed_inner(cfg: &ExperimentConfig, cohort: &Cohort, seed: u64) -> Result<SeedResult> {
    let t = cfg.horizon;
    let profile = cfg.mapping_profile()?;
    let split = split_cohort(cohort, seed)?;
    check_split(cohort, &split)?;
    let SplitTriple { train_a: a, test_b: b, valid_c: c, .. } = &split;
    let (a_ids, b_ids, c_ids) = (id_set(a), id_set(b), id_set(c));
    let not_a: HashSet<u64> = b_ids.union(&c_ids).copied().collect();

    // Tuning stage: fit on A, score on B.
    let fit_a = cfg.rebalanced(a, seed, 0)?;
    check_fit_set(&fit_a, &a_ids, &not_a, "A-stage fit")?;
    let forest_grid = grid_search_forest(&cfg.forest_grid.points(), &fit_a, b, cfg.objective, t, seed)?;
    let boost_grid = grid_search_booster(&cfg.boost_grid.points(), &fit_a, b, cfg.objective, t, seed)?;
    let ft_a = fine_tune(&cfg.pretrained, a, &profile, cfg.objective, t, &cfg.nelder_mead)?;

    let base_b = predict_cohort(&ft_a.params, b, &profile, t, "baseline_finetuned")?;
    let comps = ComponentPredictions {
        baseline: base_b.iter().map(|p| if p.valid { p.prob } else { None }).collect(),
        forest: forest_grid.best_predictions.clone(),
        boost: boost_grid.best_predictions.clone(),
    };
    let ws = search_weights(b, &comps, cfg.objective, t, &cfg.bo_config(seed))?;

    // Refit on A+B, validate on C.
    let ab = a.concat(b);
    let ab_ids: HashSet<u64> = a_ids.union(&b_ids).copied().collect();
    let fit_ab = cfg.rebalanced(&ab, seed, 1)?;
    check_fit_set(&fit_ab, &ab_ids, &c_ids, "A+B refit")?;
    check_fit_set(&ab, &ab_ids, &c_ids, "A+B fine-tune")?;
    let forest = fit_forest(&fit_ab, &forest_grid.best, seed)?;
    let boost = fit_booster(&fit_ab, &boost_grid.best, seed)?;
    let ft_ab = fine_tune(&cfg.pretrained, &ab, &profile, cfg.objective, t, &cfg.nelder_mead)?;

    let pre_c = predict_cohort(&cfg.pretrained, c, &profile, t, "baseline_pretrained")?;
    let fine_c = predict_cohort(&ft_ab.params, c, &profile, t, "baseline_finetuned")?;
    let preds = ModelPredictions::assemble(c, &pre_c, &fine_c, forest.predict_cohort(c, t), boost.predict_cohort(c, t), &ws.weights);
    let metrics = evaluate_predictions(&preds, c, t);
    let summary = |r: &crate::baseline::FineTuneResult| FineTuneSummary {
        objective_start: r.objective_start,
        objective_end: r.objective_end,
        evaluations: r.evaluations,
    };
    Ok(SeedResult {
        seed,
        counts: SplitCounts { a: a.len(), b: b.len(), c: c.len(), fit_a: fit_a.len(), fit_ab: fit_ab.len() },
        finetune_a: summary(&ft_a),
        finetune_ab: summary(&ft_ab),
        finetuned: ft_ab.params,
        weights: ws.weights,
        weight_loss: ws.loss,
        vertex_losses: ws.vertex_losses,
        invalid_c: preds.invalid_count(),
        metrics,
        predictions: Some((preds, c.times(), c.events())),
        forest_grid,
        boost_grid,
    })
}

/// Fit the final models on every record with the aggregated choices.
pub fn finalize(cfg: &ExperimentConfig, cohort: &Cohort, report: &ExperimentReport) -> Result<ModelBundle> {
    let seed = cfg.seeds[0];
    let fit = cfg.rebalanced(cohort, seed, 2)?;
    let forest = fit_forest(&fit, &report.chosen.forest, seed)?;
    let boost = fit_booster(&fit, &report.chosen.boost, seed)?;
    Ok(ModelBundle {
        horizon: cfg.horizon,
        profile: cfg.mapping_profile()?,
        pretrained: cfg.pretrained.clone(),
        finetuned: report.finetuned.clone(),
        forest,
        boost,
        weights: report.weights,
    })
}

pub struct Experiment {
    pub cohort: Cohort,
    pub seeds: Vec<SeedResult>,
    pub report: ExperimentReport,
    pub bundle: ModelBundle,
}

/// Run every seed (concurrently), aggregate, then fit the final models.
/// All internal validation finishes before any full-data fit starts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    cfg.validate()?;
    let cohort = cfg.cohort.load(cfg.horizon)?;
    let seeds: Vec<SeedResult> = cfg.seeds.par_iter().map(|&s| run_seed(cfg, &cohort, s)).collect::<Result<_>>()?;
    let report = aggregate(cfg, &cohort, &seeds)?;
    let bundle = finalize(cfg, &cohort, &report)?;
    Ok(Experiment { cohort, seeds, report, bundle })
}
