//! Hyperparameter grids and grid search (fit on one cohort, score on another).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{fit_booster, BoostHyperparams};
use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestHyperparams, SplitRule};
use crate::metrics::Objective;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestGrid {
    pub ntree: Vec<usize>,
    pub mtry: Vec<usize>,
    pub nodesize: Vec<usize>,
    pub splitrule: Vec<SplitRule>,
    /// Bernstein-encode continuous covariates for the forest.
    pub bernstein: bool,
}

impl Default for ForestGrid {
    fn default() -> Self {
        ForestGrid {
            ntree: vec![500, 1000, 1500],
            mtry: vec![3, 4, 6],
            nodesize: vec![3, 5, 10, 15],
            splitrule: vec![SplitRule::Logrank, SplitRule::Logrankscore],
            bernstein: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostGrid {
    pub eta: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub subsample: Vec<f64>,
    pub colsample_bytree: Vec<f64>,
    pub lambda: Vec<f64>,
    pub nrounds: Vec<usize>,
}

impl Default for BoostGrid {
    fn default() -> Self {
        BoostGrid {
            eta: vec![0.05, 0.1],
            max_depth: vec![2, 5],
            subsample: vec![0.6, 1.0],
            colsample_bytree: vec![0.6, 1.0],
            lambda: vec![0.05, 0.1],
            nrounds: vec![500],
        }
    }
}

fn sorted_unique<T: PartialOrd + Clone>(v: &[T]) -> Vec<T> {
    let mut out = v.to_vec();
    out.sort_by(|a, b| a.partial_cmp(b).expect("grid values are comparable"));
    out.dedup();
    out
}

impl ForestGrid {
    /// Every configuration, smallest capacity first: fewer trees, then
    /// smaller `mtry`, then larger `nodesize`, then log-rank before score.
    pub fn points(&self) -> Vec<ForestHyperparams> {
        let mut nodesize = sorted_unique(&self.nodesize);
        nodesize.reverse();
        let mut out = Vec::new();
        for &ntree in &sorted_unique(&self.ntree) {
            for &mtry in &sorted_unique(&self.mtry) {
                for &ns in &nodesize {
                    for &splitrule in &sorted_unique(&self.splitrule) {
                        out.push(ForestHyperparams { ntree, mtry, nodesize: ns, splitrule, bernstein: self.bernstein });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.ntree.is_empty() || self.mtry.is_empty() || self.nodesize.is_empty() || self.splitrule.is_empty() {
            return Err(Error::Config("forest grid has an empty dimension".into()));
        }
        self.points().iter().try_for_each(|p| p.validate())
    }
}

impl BoostGrid {
    /// Every configuration, smallest capacity first: fewer rounds, smaller
    /// depth, smaller learning rate, smaller column and row samples, then
    /// larger `lambda`.
    pub fn points(&self) -> Vec<BoostHyperparams> {
        let mut lambda = sorted_unique(&self.lambda);
        lambda.reverse();
        let mut out = Vec::new();
        for &nrounds in &sorted_unique(&self.nrounds) {
            for &max_depth in &sorted_unique(&self.max_depth) {
                for &eta in &sorted_unique(&self.eta) {
                    for &colsample_bytree in &sorted_unique(&self.colsample_bytree) {
                        for &subsample in &sorted_unique(&self.subsample) {
                            for &lambda in &lambda {
                                out.push(BoostHyperparams {
                                    eta,
                                    max_depth,
                                    subsample,
                                    colsample_bytree,
                                    lambda,
                                    nrounds,
                                    ..BoostHyperparams::default()
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let empty = self.eta.is_empty()
            || self.max_depth.is_empty()
            || self.subsample.is_empty()
            || self.colsample_bytree.is_empty()
            || self.lambda.is_empty()
            || self.nrounds.is_empty();
        if empty {
            return Err(Error::Config("boosting grid has an empty dimension".into()));
        }
        self.points().iter().try_for_each(|p| p.validate())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry<H> {
    pub params: H,
    /// Objective loss on the scoring cohort; `None` when fitting or scoring failed.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult<H> {
    pub best: H,
    pub best_loss: f64,
    pub entries: Vec<GridEntry<H>>,
    /// Predictions of the best configuration on the scoring cohort.
    #[serde(skip)]
    pub best_predictions: Vec<f64>,
}

impl<H: Clone> GridResult<H> {
    /// First strictly best entry in grid order, so ties go to smaller capacity.
    fn from_entries(entries: Vec<GridEntry<H>>, mut predictions: Vec<Option<Vec<f64>>>) -> Result<Self> {
        let mut best: Option<usize> = None;
        for (i, e) in entries.iter().enumerate() {
            if let Some(l) = e.loss {
                if best.is_none_or(|b| l < entries[b].loss.expect("best has a loss")) {
                    best = Some(i);
                }
            }
        }
        let b = best.ok_or_else(|| Error::Fit("no grid point could be fitted and scored".into()))?;
        Ok(GridResult {
            best: entries[b].params.clone(),
            best_loss: entries[b].loss.expect("best has a loss"),
            best_predictions: predictions[b].take().unwrap_or_default(),
            entries,
        })
    }
}

fn score(objective: Objective, preds: &[f64], test: &Cohort, t: f64) -> Option<f64> {
    objective.loss(preds, &test.times(), &test.events(), t).ok().filter(|l| l.is_finite())
}

/// Forest grid search. Configurations differing only in `ntree` share one fit:
/// the first `k` trees of a forest are exactly the forest fitted with `ntree = k`.
pub fn grid_search_forest(
    points: &[ForestHyperparams],
    train: &Cohort,
    test: &Cohort,
    objective: Objective,
    t: f64,
    seed: u64,
) -> Result<GridResult<ForestHyperparams>> {
    if points.is_empty() {
        return Err(Error::Config("empty forest grid".into()));
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        let key = format!("{}/{}/{}/{}", p.mtry, p.nodesize, p.splitrule.name(), p.bernstein);
        groups.entry(key).or_default().push(i);
    }
    let mut preds: Vec<Option<Vec<f64>>> = vec![None; points.len()];
    for idx in groups.values() {
        let max_trees = idx.iter().map(|&i| points[i].ntree).max().expect("nonempty group");
        let hp = ForestHyperparams { ntree: max_trees, ..points[idx[0]].clone() };
        let Ok(forest) = fit_forest(train, &hp, seed) else { continue };
        let sizes: Vec<usize> = idx.iter().map(|&i| points[i].ntree).collect();
        let per_size = forest.predict_cohort_prefixes(test, t, &sizes)?;
        for (&i, p) in idx.iter().zip(per_size) {
            preds[i] = Some(p);
        }
    }
    let entries: Vec<GridEntry<ForestHyperparams>> = points
        .iter()
        .zip(&preds)
        .map(|(p, pr)| GridEntry { params: p.clone(), loss: pr.as_ref().and_then(|pr| score(objective, pr, test, t)) })
        .collect();
    GridResult::from_entries(entries, preds)
}

pub fn grid_search_booster(
    points: &[BoostHyperparams],
    train: &Cohort,
    test: &Cohort,
    objective: Objective,
    t: f64,
    seed: u64,
) -> Result<GridResult<BoostHyperparams>> {
    if points.is_empty() {
        return Err(Error::Config("empty boosting grid".into()));
    }
    let preds: Vec<Option<Vec<f64>>> = points
        .par_iter()
        .map(|p| fit_booster(train, p, seed).ok().map(|m| m.predict_cohort(test, t)))
        .collect();
    let entries = points
        .iter()
        .zip(&preds)
        .map(|(p, pr)| GridEntry { params: p.clone(), loss: pr.as_ref().and_then(|pr| score(objective, pr, test, t)) })
        .collect();
    GridResult::from_entries(entries, preds)
}
