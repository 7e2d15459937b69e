//! Final models, their joint predictions, evaluation tables and external validation.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{load_params, predict_cohort, predict_survival_tagged, save_params, BaselineParamVector, SurvivalPrediction};
use crate::boost::FittedBooster;
use crate::cohort::{map_to_baseline_input, Cohort, MappingProfile, PatientRecord};
use crate::ensemble::{combine_probs, EnsembleWeights};
use crate::error::{Error, Result};
use crate::forest::FittedForest;
use crate::metrics::{bootstrap_ci, ici, ipcw_auc, BootstrapCi};

/// The five evaluated models, in report order.
pub const MODELS: [&str; 5] = ["baseline_pretrained", "baseline_finetuned", "forest", "boost", "ensemble"];

/// Evaluation subsets by baseline validity.
pub const SUBSETS: [&str; 3] = ["all", "valid", "invalid"];

pub const METRICS: [&str; 2] = ["ici", "auc"];

/// Predictions of the five models on one cohort. Baseline entries are `None`
/// for records the baseline cannot score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPredictions {
    pub record_ids: Vec<u64>,
    pub baseline_pretrained: Vec<Option<f64>>,
    pub baseline_finetuned: Vec<Option<f64>>,
    pub forest: Vec<f64>,
    pub boost: Vec<f64>,
    pub ensemble: Vec<f64>,
}

impl ModelPredictions {
    pub fn assemble(
        cohort: &Cohort,
        pretrained: &[SurvivalPrediction],
        finetuned: &[SurvivalPrediction],
        forest: Vec<f64>,
        boost: Vec<f64>,
        weights: &EnsembleWeights,
    ) -> Self {
        let prob = |p: &SurvivalPrediction| if p.valid { p.prob } else { None };
        let baseline_finetuned: Vec<Option<f64>> = finetuned.iter().map(prob).collect();
        let ensemble = (0..cohort.len())
            .map(|i| combine_probs([baseline_finetuned[i], Some(forest[i]), Some(boost[i])], weights).expect("forest present"))
            .collect();
        ModelPredictions {
            record_ids: cohort.ids(),
            baseline_pretrained: pretrained.iter().map(prob).collect(),
            baseline_finetuned,
            forest,
            boost,
            ensemble,
        }
    }

    pub fn len(&self) -> usize {
        self.record_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.record_ids.is_empty()
    }

    /// Per-record predictions of `model` (one of [`MODELS`]).
    pub fn model(&self, model: &str) -> Vec<Option<f64>> {
        match model {
            "baseline_pretrained" => self.baseline_pretrained.clone(),
            "baseline_finetuned" => self.baseline_finetuned.clone(),
            "forest" => self.forest.iter().map(|p| Some(*p)).collect(),
            "boost" => self.boost.iter().map(|p| Some(*p)).collect(),
            "ensemble" => self.ensemble.iter().map(|p| Some(*p)).collect(),
            other => panic!("unknown model `{other}`"),
        }
    }

    /// Whether the baseline can score each record (validity does not depend on parameters).
    pub fn baseline_valid(&self) -> Vec<bool> {
        self.baseline_pretrained.iter().map(Option::is_some).collect()
    }

    pub fn invalid_count(&self) -> usize {
        self.baseline_pretrained.iter().filter(|p| p.is_none()).count()
    }
}

/// One metric for one model on one subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub subset: String,
    pub metric: String,
    /// `None` when the metric is undefined on this subset.
    pub value: Option<f64>,
    /// Records scored by the model in this subset.
    pub n: usize,
    pub events: usize,
}

fn metric_value(metric: &str, preds: &[f64], times: &[f64], events: &[bool], t: f64) -> Option<f64> {
    let v = match metric {
        "ici" => ici(preds, times, events, t),
        "auc" => {
            let risks: Vec<f64> = preds.iter().map(|p| 1.0 - p).collect();
            ipcw_auc(&risks, times, events, t)
        }
        other => panic!("unknown metric `{other}`"),
    };
    v.ok()
}

/// ICI and AUC of every model on the full cohort and on the subsets with and
/// without a valid baseline prediction. Baseline models only ever score their
/// valid records, so their `all` and `valid` rows coincide.
pub fn evaluate_predictions(preds: &ModelPredictions, cohort: &Cohort, t: f64) -> Vec<MetricRow> {
    let valid = preds.baseline_valid();
    let times = cohort.times();
    let events = cohort.events();
    let mut jobs = Vec::new();
    for model in MODELS {
        let p = preds.model(model);
        for subset in SUBSETS {
            let keep: Vec<usize> = (0..cohort.len())
                .filter(|&i| match subset {
                    "valid" => valid[i],
                    "invalid" => !valid[i],
                    _ => true,
                })
                .filter(|&i| p[i].is_some())
                .collect();
            for metric in METRICS {
                jobs.push((model, subset, metric, keep.clone(), p.clone()));
            }
        }
    }
    jobs.into_par_iter()
        .map(|(model, subset, metric, keep, p)| {
            let pr: Vec<f64> = keep.iter().map(|&i| p[i].expect("kept")).collect();
            let tt: Vec<f64> = keep.iter().map(|&i| times[i]).collect();
            let ee: Vec<bool> = keep.iter().map(|&i| events[i]).collect();
            let value = if keep.is_empty() { None } else { metric_value(metric, &pr, &tt, &ee, t) };
            MetricRow {
                model: model.into(),
                subset: subset.into(),
                metric: metric.into(),
                value,
                n: keep.len(),
                events: ee.iter().filter(|e| **e).count(),
            }
        })
        .collect()
}

/// Finalized models: pretrained and fine-tuned baseline, forest, booster and
/// ensemble weights, together with the mapping profile and horizon they assume.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub horizon: f64,
    pub profile: MappingProfile,
    pub pretrained: BaselineParamVector,
    pub finetuned: BaselineParamVector,
    pub forest: FittedForest,
    pub boost: FittedBooster,
    pub weights: EnsembleWeights,
}

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct BundleManifest {
    version: u32,
    horizon: f64,
    profile: MappingProfile,
    weights: EnsembleWeights,
}

impl ModelBundle {
    pub fn predict(&self, cohort: &Cohort) -> Result<ModelPredictions> {
        let t = self.horizon;
        let pre = predict_cohort(&self.pretrained, cohort, &self.profile, t, "baseline_pretrained")?;
        let fine = predict_cohort(&self.finetuned, cohort, &self.profile, t, "baseline_finetuned")?;
        let forest = self.forest.predict_cohort(cohort, t);
        let boost = self.boost.predict_cohort(cohort, t);
        Ok(ModelPredictions::assemble(cohort, &pre, &fine, forest, boost, &self.weights))
    }

    /// Survival probability of one record under `model` (one of [`MODELS`]).
    pub fn predict_record(&self, model: &str, r: &PatientRecord) -> Option<f64> {
        let t = self.horizon;
        let base = |p: &BaselineParamVector| {
            predict_survival_tagged(p, &map_to_baseline_input(r, &self.profile), t, model).ok().and_then(|s| s.prob)
        };
        match model {
            "baseline_pretrained" => base(&self.pretrained),
            "baseline_finetuned" => base(&self.finetuned),
            "forest" => Some(self.forest.predict(r, t)),
            "boost" => Some(self.boost.predict(r, t)),
            "ensemble" => combine_probs(
                [base(&self.finetuned), Some(self.forest.predict(r, t)), Some(self.boost.predict(r, t))],
                &self.weights,
            ),
            _ => None,
        }
    }

    /// Write the bundle as separate JSON files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest =
            BundleManifest { version: BUNDLE_VERSION, horizon: self.horizon, profile: self.profile.clone(), weights: self.weights };
        fs::write(dir.join("bundle.json"), serde_json::to_string_pretty(&manifest)?)?;
        save_params(&self.pretrained, &dir.join("baseline_pretrained.json"))?;
        save_params(&self.finetuned, &dir.join("baseline_finetuned.json"))?;
        self.forest.save(&dir.join("forest.json"))?;
        self.boost.save(&dir.join("boost.json"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: BundleManifest = serde_json::from_str(&fs::read_to_string(dir.join("bundle.json"))?)?;
        if manifest.version != BUNDLE_VERSION {
            return Err(Error::Config(format!("unsupported model bundle version {}", manifest.version)));
        }
        manifest.weights.validate()?;
        Ok(ModelBundle {
            horizon: manifest.horizon,
            profile: manifest.profile,
            pretrained: load_params(&dir.join("baseline_pretrained.json"))?,
            finetuned: load_params(&dir.join("baseline_finetuned.json"))?,
            forest: FittedForest::load(&dir.join("forest.json"))?,
            boost: FittedBooster::load(&dir.join("boost.json"))?,
            weights: manifest.weights,
        })
    }
}

/// A metric with its percentile bootstrap interval, or the reason it is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalMetric {
    pub model: String,
    pub metric: String,
    pub n: usize,
    pub ci: Option<BootstrapCi>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalReport {
    pub provenance: String,
    pub horizon: f64,
    pub records: usize,
    pub events: usize,
    pub invalid_baseline: usize,
    pub resamples: usize,
    pub seed: u64,
    pub metrics: Vec<ExternalMetric>,
}

/// Evaluate finalized models on an external cohort (no refitting), with
/// percentile bootstrap intervals for ICI and AUC.
pub fn external_validate(
    bundle: &ModelBundle,
    external: &Cohort,
    profile: &MappingProfile,
    t: f64,
    resamples: usize,
    seed: u64,
) -> Result<ExternalReport> {
    let bundle = ModelBundle { profile: profile.clone(), horizon: t, ..bundle.clone() };
    let preds = bundle.predict(external)?;
    let times = external.times();
    let events = external.events();
    let mut metrics = Vec::new();
    for model in MODELS {
        let p = preds.model(model);
        let keep: Vec<usize> = (0..external.len()).filter(|&i| p[i].is_some()).collect();
        let pr: Vec<f64> = keep.iter().map(|&i| p[i].expect("kept")).collect();
        let tt: Vec<f64> = keep.iter().map(|&i| times[i]).collect();
        let ee: Vec<bool> = keep.iter().map(|&i| events[i]).collect();
        for metric in METRICS {
            let eval = |idx: &[usize]| -> Result<f64> {
                let a: Vec<f64> = idx.iter().map(|&i| pr[i]).collect();
                let b: Vec<f64> = idx.iter().map(|&i| tt[i]).collect();
                let c: Vec<bool> = idx.iter().map(|&i| ee[i]).collect();
                match metric {
                    "ici" => ici(&a, &b, &c, t),
                    _ => ipcw_auc(&a.iter().map(|p| 1.0 - p).collect::<Vec<_>>(), &b, &c, t),
                }
            };
            let res = if keep.is_empty() {
                Err(Error::UndefinedMetric("model scores no record".into()))
            } else {
                bootstrap_ci(keep.len(), eval, resamples, seed)
            };
            let (ci, error) = match res {
                Ok(ci) => (Some(ci), None),
                Err(e) => (None, Some(e.to_string())),
            };
            metrics.push(ExternalMetric { model: model.into(), metric: metric.into(), n: keep.len(), ci, error });
        }
    }
    Ok(ExternalReport {
        provenance: external.provenance.clone(),
        horizon: t,
        records: external.len(),
        events: external.event_count(),
        invalid_baseline: preds.invalid_count(),
        resamples,
        seed,
        metrics,
    })
}
