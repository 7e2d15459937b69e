//! Seed aggregation, the experiment report and its file outputs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Experiment, ExperimentConfig, ModelPredictions, SeedResult, METRICS, MODELS, SUBSETS};
use crate::baseline::BaselineParamVector;
use crate::boost::BoostHyperparams;
use crate::cohort::Cohort;
use crate::ensemble::EnsembleWeights;
use crate::error::{Error, Result};
use crate::forest::{ForestHyperparams, SplitRule};
use crate::metrics::{calibration_plot_data, roc_curve_data, write_calibration_csv, write_roc_csv};
use crate::stats::quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTally {
    pub value: String,
    pub count: usize,
}

/// Majority vote; ties go to the smaller value.
pub fn majority_vote<T: PartialOrd + Clone + Display>(values: &[T]) -> Option<(T, Vec<VoteTally>)> {
    let mut distinct: Vec<T> = values.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("comparable votes"));
    distinct.dedup();
    let tallies: Vec<(T, usize)> = distinct
        .into_iter()
        .map(|v| {
            let n = values.iter().filter(|x| **x == v).count();
            (v, n)
        })
        .collect();
    let mut best: Option<&(T, usize)> = None;
    for t in &tallies {
        if best.is_none_or(|b| t.1 > b.1) {
            best = Some(t);
        }
    }
    let winner = best?.0.clone();
    Some((winner, tallies.into_iter().map(|(v, count)| VoteTally { value: v.to_string(), count }).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenHyperparams {
    pub forest: ForestHyperparams,
    pub boost: BoostHyperparams,
    /// Tallies per hyperparameter name.
    pub votes: BTreeMap<String, Vec<VoteTally>>,
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
struct Rule(SplitRule);

impl Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.0.name())
    }
}

fn vote_params(seeds: &[SeedResult]) -> ChosenHyperparams {
    let mut votes = BTreeMap::new();
    fn pick<T: PartialOrd + Clone + Display>(
        votes: &mut BTreeMap<String, Vec<VoteTally>>,
        name: &str,
        values: Vec<T>,
    ) -> T {
        let (v, tallies) = majority_vote(&values).expect("at least one seed");
        votes.insert(name.to_string(), tallies);
        v
    }
    let f: Vec<&ForestHyperparams> = seeds.iter().map(|s| &s.forest_grid.best).collect();
    let b: Vec<&BoostHyperparams> = seeds.iter().map(|s| &s.boost_grid.best).collect();
    let forest = ForestHyperparams {
        ntree: pick(&mut votes, "forest.ntree", f.iter().map(|p| p.ntree).collect()),
        mtry: pick(&mut votes, "forest.mtry", f.iter().map(|p| p.mtry).collect()),
        nodesize: pick(&mut votes, "forest.nodesize", f.iter().map(|p| p.nodesize).collect()),
        splitrule: pick(&mut votes, "forest.splitrule", f.iter().map(|p| Rule(p.splitrule)).collect()).0,
        bernstein: f[0].bernstein,
    };
    let boost = BoostHyperparams {
        eta: pick(&mut votes, "boost.eta", b.iter().map(|p| p.eta).collect()),
        max_depth: pick(&mut votes, "boost.max_depth", b.iter().map(|p| p.max_depth).collect()),
        subsample: pick(&mut votes, "boost.subsample", b.iter().map(|p| p.subsample).collect()),
        colsample_bytree: pick(&mut votes, "boost.colsample_bytree", b.iter().map(|p| p.colsample_bytree).collect()),
        lambda: pick(&mut votes, "boost.lambda", b.iter().map(|p| p.lambda).collect()),
        nrounds: pick(&mut votes, "boost.nrounds", b.iter().map(|p| p.nrounds).collect()),
        min_child_weight: b[0].min_child_weight,
    };
    ChosenHyperparams { forest, boost, votes }
}

/// Median and interquartile range of one metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub model: String,
    pub subset: String,
    pub metric: String,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// Seeds where the metric was defined.
    pub seeds_defined: usize,
}

pub fn summarize(model: &str, subset: &str, metric: &str, values: &[f64]) -> MetricSummary {
    let q = |p: f64| (!values.is_empty()).then(|| quantile(values, p));
    MetricSummary {
        model: model.into(),
        subset: subset.into(),
        metric: metric.into(),
        median: q(0.5),
        q1: q(0.25),
        q3: q(0.75),
        min: q(0.0),
        max: q(1.0),
        seeds_defined: values.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub counts: super::SplitCounts,
    pub forest: ForestHyperparams,
    pub forest_loss: f64,
    pub boost: BoostHyperparams,
    pub boost_loss: f64,
    pub finetune_a: super::FineTuneSummary,
    pub finetune_ab: super::FineTuneSummary,
    pub finetuned: BaselineParamVector,
    pub weights: EnsembleWeights,
    pub weight_loss: f64,
    pub vertex_losses: [f64; 3],
    pub invalid_c: usize,
    pub metrics: Vec<super::MetricRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub software: String,
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub cohort: CohortSummary,
    pub per_seed: Vec<SeedSummary>,
    pub summary: Vec<MetricSummary>,
    pub chosen: ChosenHyperparams,
    /// Mean of the per-seed fine-tuned parameter vectors.
    pub finetuned: BaselineParamVector,
    /// Mean of the per-seed ensemble weights, renormalized.
    pub weights: EnsembleWeights,
    pub invalid_counts: Vec<usize>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub provenance: String,
    pub records: usize,
    pub events: usize,
    pub horizon: f64,
}

/// Combine per-seed results: majority-voted hyperparameters, averaged
/// parameters and weights, and median/IQR metric summaries.
pub fn aggregate(cfg: &ExperimentConfig, cohort: &Cohort, seeds: &[SeedResult]) -> Result<ExperimentReport> {
    if seeds.is_empty() {
        return Err(Error::Config("nothing to aggregate".into()));
    }
    let chosen = vote_params(seeds);
    let finetuned = BaselineParamVector::average(&seeds.iter().map(|s| s.finetuned.clone()).collect::<Vec<_>>())?;
    let weights = EnsembleWeights::average(&seeds.iter().map(|s| s.weights).collect::<Vec<_>>())?;
    let mut summary = Vec::new();
    for model in MODELS {
        for subset in SUBSETS {
            for metric in METRICS {
                let values: Vec<f64> = seeds
                    .iter()
                    .filter_map(|s| {
                        s.metrics.iter().find(|r| r.model == model && r.subset == subset && r.metric == metric).and_then(|r| r.value)
                    })
                    .collect();
                summary.push(summarize(model, subset, metric, &values));
            }
        }
    }
    let per_seed = seeds
        .iter()
        .map(|s| SeedSummary {
            seed: s.seed,
            counts: s.counts.clone(),
            forest: s.forest_grid.best.clone(),
            forest_loss: s.forest_grid.best_loss,
            boost: s.boost_grid.best.clone(),
            boost_loss: s.boost_grid.best_loss,
            finetune_a: s.finetune_a.clone(),
            finetune_ab: s.finetune_ab.clone(),
            finetuned: s.finetuned.clone(),
            weights: s.weights,
            weight_loss: s.weight_loss,
            vertex_losses: s.vertex_losses,
            invalid_c: s.invalid_c,
            metrics: s.metrics.clone(),
        })
        .collect();
    let mut notes = vec![format!("objective: {}", cfg.objective.name())];
    if cfg.rebalance {
        notes.push("ROSE rebalancing applied to forest and booster fitting folds".into());
    }
    notes.push("baseline models are scored on records with a valid baseline prediction only".into());
    Ok(ExperimentReport {
        software: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        config: ExperimentConfig { output_dir: None, ..cfg.clone() },
        cohort: CohortSummary {
            provenance: cohort.provenance.clone(),
            records: cohort.len(),
            events: cohort.event_count(),
            horizon: cohort.horizon,
        },
        per_seed,
        summary,
        chosen,
        finetuned,
        weights,
        invalid_counts: seeds.iter().map(|s| s.invalid_c).collect(),
        notes,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// `seed,model,subset,metric,value,n,events`, with undefined values as `NA`.
pub fn write_metrics_csv<W: Write>(report: &ExperimentReport, mut w: W) -> Result<()> {
    writeln!(w, "seed,model,subset,metric,value,n,events")?;
    for s in &report.per_seed {
        for r in &s.metrics {
            writeln!(w, "{},{},{},{},{},{},{}", s.seed, r.model, r.subset, r.metric, fmt_opt(r.value), r.n, r.events)?;
        }
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(report: &ExperimentReport, mut w: W) -> Result<()> {
    writeln!(w, "model,subset,metric,median,q1,q3,min,max,seeds_defined")?;
    for s in &report.summary {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            s.model,
            s.subset,
            s.metric,
            fmt_opt(s.median),
            fmt_opt(s.q1),
            fmt_opt(s.q3),
            fmt_opt(s.min),
            fmt_opt(s.max),
            s.seeds_defined
        )?;
    }
    Ok(())
}

/// `seed,record_id,model,time,event,prob`, one row per scored record and model.
pub fn write_predictions_csv<W: Write>(
    mut w: W,
    seed: Option<u64>,
    preds: &ModelPredictions,
    times: &[f64],
    events: &[bool],
    header: bool,
) -> Result<()> {
    if header {
        writeln!(w, "seed,record_id,model,time,event,prob")?;
    }
    let seed = seed.map_or_else(|| "NA".to_string(), |s| s.to_string());
    for model in MODELS {
        let p = preds.model(model);
        for i in 0..preds.len() {
            if let Some(prob) = p[i] {
                writeln!(w, "{seed},{},{model},{},{},{prob}", preds.record_ids[i], times[i], u8::from(events[i]))?;
            }
        }
    }
    Ok(())
}

/// Calibration and ROC plot data for each model's scored records.
pub fn write_plot_data(dir: &Path, preds: &ModelPredictions, times: &[f64], events: &[bool], t: f64) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut skipped = Vec::new();
    for model in MODELS {
        let p = preds.model(model);
        let keep: Vec<usize> = (0..preds.len()).filter(|&i| p[i].is_some()).collect();
        let pr: Vec<f64> = keep.iter().map(|&i| p[i].expect("kept")).collect();
        let tt: Vec<f64> = keep.iter().map(|&i| times[i]).collect();
        let ee: Vec<bool> = keep.iter().map(|&i| events[i]).collect();
        match calibration_plot_data(&pr, &tt, &ee, t) {
            Ok(c) => write_calibration_csv(&c, BufWriter::new(File::create(dir.join(format!("calibration_{model}.csv")))?))?,
            Err(e) => skipped.push(format!("calibration_{model}: {e}")),
        }
        let risks: Vec<f64> = pr.iter().map(|p| 1.0 - p).collect();
        match roc_curve_data(&risks, &tt, &ee, t) {
            Ok(r) => write_roc_csv(&r, BufWriter::new(File::create(dir.join(format!("roc_{model}.csv")))?))?,
            Err(e) => skipped.push(format!("roc_{model}: {e}")),
        }
    }
    Ok(skipped)
}

/// Write `report.json`, `metrics.csv`, `summary.csv`, `predictions.csv`,
/// plot data for the first seed's validation fold and the final models.
pub fn write_experiment(exp: &Experiment, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&exp.report)?)?;
    write_metrics_csv(&exp.report, BufWriter::new(File::create(dir.join("metrics.csv"))?))?;
    write_summary_csv(&exp.report, BufWriter::new(File::create(dir.join("summary.csv"))?))?;
    let mut w = BufWriter::new(File::create(dir.join("predictions.csv"))?);
    for (k, s) in exp.seeds.iter().enumerate() {
        if let Some((p, t, e)) = &s.predictions {
            write_predictions_csv(&mut w, Some(s.seed), p, t, e, k == 0)?;
        }
    }
    w.flush()?;
    if let Some((p, t, e)) = exp.seeds.first().and_then(|s| s.predictions.as_ref()) {
        write_plot_data(&dir.join("plots"), p, t, e, exp.report.config.horizon)?;
    }
    exp.bundle.save(&dir.join("models"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_with_ties_to_smaller() {
        let mut v = vec![500; 6];
        v.extend([1000; 4]);
        assert_eq!(majority_vote(&v).unwrap().0, 500);
        assert_eq!(majority_vote(&[1000, 500]).unwrap().0, 500);
        let (w, t) = majority_vote(&[0.1, 0.05, 0.1]).unwrap();
        assert_eq!(w, 0.1);
        assert_eq!(t.iter().map(|x| x.count).sum::<usize>(), 3);
    }

    #[test]
    fn single_seed_summary_has_zero_width() {
        let s = summarize("forest", "all", "ici", &[0.02]);
        assert_eq!((s.median, s.q1, s.q3), (Some(0.02), Some(0.02), Some(0.02)));
        let e = summarize("forest", "invalid", "auc", &[]);
        assert_eq!(e.median, None);
    }
}
