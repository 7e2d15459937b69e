//! Convex combination of the baseline, forest and booster survival
//! probabilities, with a weight search and a fallback for invalid baseline
//! predictions.

use serde::{Deserialize, Serialize};

use crate::baseline::SurvivalPrediction;
use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::metrics::Objective;
use crate::optimize::{bayes_opt_maximize, BOConfig};

pub const MODEL_TAG: &str = "ensemble";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub w_baseline: f64,
    pub w_forest: f64,
    pub w_boost: f64,
}

impl EnsembleWeights {
    pub fn new(w_baseline: f64, w_forest: f64, w_boost: f64) -> Result<Self> {
        let w = EnsembleWeights { w_baseline, w_forest, w_boost };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Invariant(format!("ensemble weights must lie in [0, 1]: {a:?}")));
        }
        if (a.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Invariant(format!("ensemble weights must sum to 1: {a:?}")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.w_baseline, self.w_forest, self.w_boost]
    }

    /// Map the unit square onto the simplex (uniformly):
    /// `(1 - sqrt(u), sqrt(u)(1 - v), sqrt(u) v)`.
    pub fn from_unit_square(u: f64, v: f64) -> Self {
        let (u, v) = (u.clamp(0.0, 1.0), v.clamp(0.0, 1.0));
        let s = u.sqrt();
        let w_forest = s * (1.0 - v);
        let w_boost = s * v;
        EnsembleWeights { w_baseline: 1.0 - w_forest - w_boost, w_forest, w_boost }
    }

    /// Unit-square coordinates of the three vertices and the centroid.
    pub fn seed_points() -> Vec<Vec<f64>> {
        vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![4.0 / 9.0, 0.5]]
    }

    /// Arithmetic mean, renormalized to sum to one.
    pub fn average(ws: &[EnsembleWeights]) -> Result<Self> {
        if ws.is_empty() {
            return Err(Error::Config("cannot average zero weight vectors".into()));
        }
        let mut acc = [0.0; 3];
        for w in ws {
            for (a, x) in acc.iter_mut().zip(w.as_array()) {
                *a += x;
            }
        }
        let s: f64 = acc.iter().sum();
        Ok(EnsembleWeights { w_baseline: acc[0] / s, w_forest: acc[1] / s, w_boost: acc[2] / s })
    }
}

/// Weighted mean over the components that are present. Weights are
/// renormalized over the present components; if those carry no weight at all
/// they are averaged equally.
pub fn combine_probs(probs: [Option<f64>; 3], w: &EnsembleWeights) -> Option<f64> {
    let weights = w.as_array();
    let present: Vec<(f64, f64)> = probs.iter().zip(weights).filter_map(|(p, w)| p.map(|p| (p, w))).collect();
    if present.is_empty() {
        return None;
    }
    let total: f64 = present.iter().map(|(_, w)| w).sum();
    if total > 0.0 {
        Some(present.iter().map(|(p, w)| p * w).sum::<f64>() / total)
    } else {
        Some(present.iter().map(|(p, _)| p).sum::<f64>() / present.len() as f64)
    }
}

/// Combine baseline, forest and booster predictions (in that order).
pub fn combine(preds: &[SurvivalPrediction; 3], w: &EnsembleWeights) -> Result<SurvivalPrediction> {
    let probs = [0, 1, 2].map(|i| if preds[i].valid { preds[i].prob } else { None });
    combine_probs(probs, w)
        .map(|p| SurvivalPrediction::valid(p, MODEL_TAG))
        .ok_or_else(|| Error::Invariant("every ensemble component is invalid".into()))
}

/// Component predictions on one cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPredictions {
    pub baseline: Vec<Option<f64>>,
    pub forest: Vec<f64>,
    pub boost: Vec<f64>,
}

impl ComponentPredictions {
    pub fn len(&self) -> usize {
        self.forest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forest.is_empty()
    }

    pub fn combined(&self, w: &EnsembleWeights) -> Vec<f64> {
        (0..self.len())
            .map(|i| combine_probs([self.baseline[i], Some(self.forest[i]), Some(self.boost[i])], w).expect("forest present"))
            .collect()
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.baseline.len() != n || self.forest.len() != n || self.boost.len() != n {
            return Err(Error::Config("component predictions do not match the tuning cohort".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSearch {
    pub weights: EnsembleWeights,
    /// Objective loss (ICI, or negated AUC) at `weights`.
    pub loss: f64,
    /// Losses of the single-model vertices (baseline, forest, boost).
    pub vertex_losses: [f64; 3],
    pub evaluations: usize,
}

/// Bayesian optimization of the weights on a tuning cohort. The simplex
/// vertices and centroid are always evaluated first.
pub fn search_weights(
    tune: &Cohort,
    preds: &ComponentPredictions,
    objective: Objective,
    t: f64,
    bo: &BOConfig,
) -> Result<WeightSearch> {
    preds.check(tune.len())?;
    let times = tune.times();
    let events = tune.events();
    let loss = |w: &EnsembleWeights| objective.loss(&preds.combined(w), &times, &events, t);
    // Surface an undefined objective as an error rather than searching blindly.
    loss(&EnsembleWeights::from_unit_square(4.0 / 9.0, 0.5))?;
    let mut cfg = bo.clone();
    cfg.bounds = vec![(0.0, 1.0), (0.0, 1.0)];
    cfg.initial_points = EnsembleWeights::seed_points();
    cfg.evaluations = cfg.evaluations.max(cfg.initial_points.len() + cfg.initial_random + 1);
    let res = bayes_opt_maximize(
        |x| loss(&EnsembleWeights::from_unit_square(x[0], x[1])).map_or(f64::NEG_INFINITY, |l| -l),
        &cfg,
    )?;
    let vertex = |i: usize| -res.history[i].1;
    Ok(WeightSearch {
        weights: EnsembleWeights::from_unit_square(res.x[0], res.x[1]),
        loss: -res.fx,
        vertex_losses: [vertex(0), vertex(1), vertex(2)],
        evaluations: res.history.len(),
    })
}
