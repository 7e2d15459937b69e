//! End-to-end acceptance checks, one PASS/FAIL line per criterion.

mod common;

use std::collections::HashMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use survtune_core::baseline::{default_nm_config, fine_tune, predict_cohort, BaselineParamVector};
use survtune_core::boost::{cox_grad_hess, fit_booster, BoostHyperparams};
use survtune_core::cohort::{generate_synthetic, GeneratorConfig, MissingMask, MappingProfile};
use survtune_core::ensemble::*;
use survtune_core::explain::shap_values;
use survtune_core::forest::{fit_forest, ForestHyperparams, SplitRule};
use survtune_core::metrics::*;
use survtune_core::optimize::BOConfig;
use survtune_core::pipeline::*;
use survtune_core::rebalance::{rose_resample, RoseConfig};
use survtune_core::{rng, Cohort, PatientRecord};

use common::*;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg.into()) }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let el = start.elapsed();
    ensure(el < limit, format!("took {el:.1?}, limit {limit:?}"))
}

fn ici_on_valid(p: &BaselineParamVector, c: &Cohort) -> f64 {
    let preds = predict_cohort(p, c, &MappingProfile::ma27(), 5.0, "b").unwrap();
    let keep: Vec<usize> = (0..c.len()).filter(|&i| preds[i].valid).collect();
    let probs: Vec<f64> = keep.iter().map(|&i| preds[i].prob.unwrap()).collect();
    let times: Vec<f64> = keep.iter().map(|&i| c.records[i].time).collect();
    let events: Vec<bool> = keep.iter().map(|&i| c.records[i].event).collect();
    ici(&probs, &times, &events, 5.0).unwrap()
}

fn c1_auc_oracle() -> Result<(), String> {
    let start = Instant::now();
    let mut r = rng::seeded(1);
    let mut compared = 0;
    for k in 0..100 {
        let n = 2 + k * 2;
        let (risks, times, events) = random_instance(&mut r, n);
        match (ipcw_auc(&risks, &times, &events, 5.0), auc_by_pairs(&risks, &times, &events, 5.0)) {
            (Ok(a), Some(b)) => {
                ensure((a - b).abs() <= 1e-12, format!("instance {k}: {a} vs {b}"))?;
                compared += 1;
            }
            (Err(_), None) => {}
            (a, b) => return Err(format!("instance {k}: definedness differs ({a:?}, {b:?})")),
        }
    }
    ensure(compared >= 90, format!("only {compared} defined instances"))?;
    within(start, Duration::from_secs(5))
}

fn c2_kaplan_meier() -> Result<(), String> {
    let km = kaplan_meier(&[1.0, 2.0, 3.0], &[true, false, true]);
    let s = [1.0, 2.0, 3.0].map(|t| km.eval(t));
    ensure(s == [2.0 / 3.0, 2.0 / 3.0, 0.0], format!("S = {s:?}"))?;
    let mut r = rng::seeded(2);
    for _ in 0..20 {
        let n = 30;
        let mut times: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        rand::seq::SliceRandom::shuffle(times.as_mut_slice(), &mut r);
        let events: Vec<bool> = (0..n).map(|_| rand::Rng::random_bool(&mut r, 0.5)).collect();
        let flipped: Vec<bool> = events.iter().map(|e| !e).collect();
        let g = kaplan_meier_censoring(&times, &events);
        let s = kaplan_meier(&times, &flipped);
        for t in 0..=n + 1 {
            let t = t as f64 + 0.5;
            ensure(g.eval(t) == s.eval(t), format!("G({t}) = {} but flipped S = {}", g.eval(t), s.eval(t)))?;
        }
    }
    Ok(())
}

fn c3_calibration() -> Result<(), String> {
    let start = Instant::now();
    let s = generate_synthetic(&GeneratorConfig { n: 5000, ..GeneratorConfig::default() }, 3).unwrap();
    let (times, events) = (s.cohort.times(), s.cohort.events());
    let exact = ici(&s.true_survival, &times, &events, 5.0).map_err(|e| e.to_string())?;
    ensure(exact < 0.0125, format!("ICI of the truth {exact}"))?;
    let shifted: Vec<f64> = s.true_survival.iter().map(|p| (p - 0.05).max(0.0)).collect();
    let off = ici(&shifted, &times, &events, 5.0).map_err(|e| e.to_string())?;
    ensure((0.035..=0.065).contains(&off), format!("shifted ICI {off}"))?;
    within(start, Duration::from_secs(30))
}

fn c4_gradient() -> Result<(), String> {
    let mut r = rng::seeded(4);
    for k in 0..50 {
        let n = 2 + k % 19;
        let (_, times, mut events) = random_instance(&mut r, n);
        events[0] = true;
        let eta: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut r, -2.0..2.0)).collect();
        let (grad, _) = cox_grad_hess(&eta, &times, &events).map_err(|e| e.to_string())?;
        let sum: f64 = grad.iter().sum();
        ensure(sum.abs() <= 1e-10, format!("instance {k}: sum of gradient {sum}"))?;
        for i in 0..n {
            let h = 1e-5;
            let (mut up, mut down) = (eta.clone(), eta.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (breslow_nll(&up, &times, &events) - breslow_nll(&down, &times, &events)) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(1.0);
            ensure(rel <= 1e-6, format!("instance {k}, i {i}: {} vs {fd}", grad[i]))?;
        }
    }
    Ok(())
}

fn c5_fine_tuning() -> Result<(), String> {
    let start = Instant::now();
    let cfg = GeneratorConfig { n: 4000, event_rate: Some(0.15), ..GeneratorConfig::default() };
    let synth = generate_synthetic(&cfg, 31).unwrap();
    let truth = synth.true_params.clone();
    let mut p0 = truth.clone();
    for name in ["bc_log_nodes", "bc_grade3"] {
        p0.set(name, truth.get(name).unwrap() + 0.5).unwrap();
    }
    let res = fine_tune(&p0, &synth.cohort, &MappingProfile::ma27(), Objective::Ici, 5.0, &default_nm_config())
        .map_err(|e| e.to_string())?;
    ensure(res.trace.windows(2).all(|w| w[1] <= w[0]), "best-so-far trace increased")?;
    let (tuned, oracle, start_ici) = (ici_on_valid(&res.params, &synth.cohort), ici_on_valid(&truth, &synth.cohort), ici_on_valid(&p0, &synth.cohort));
    ensure(tuned <= oracle + 0.01, format!("tuned {tuned}, truth {oracle}, start {start_ici}"))?;
    within(start, Duration::from_secs(120))
}

fn c6_ensemble() -> Result<(), String> {
    let s = generate_synthetic(&GeneratorConfig { n: 1500, event_rate: Some(0.2), ..GeneratorConfig::default() }, 6).unwrap();
    let mut r = rng::seeded(6);
    let preds = ComponentPredictions {
        baseline: s.true_survival.iter().map(|p| Some(*p)).collect(),
        forest: s.true_survival.iter().map(|p| 0.8 * p).collect(),
        boost: (0..1500).map(|_| rand::Rng::random_range(&mut r, 0.4..0.9)).collect(),
    };
    let bo = BOConfig { evaluations: 30, ..BOConfig::new(vec![(0.0, 1.0); 2], 6) };
    let res = search_weights(&s.cohort, &preds, Objective::Ici, 5.0, &bo).map_err(|e| e.to_string())?;
    for v in res.vertex_losses {
        ensure(res.loss <= v, format!("searched {} above vertex {v}", res.loss))?;
    }
    let w = EnsembleWeights::new(0.5, 0.3, 0.2).unwrap();
    let p = combine_probs([None, Some(0.9), Some(0.8)], &w).unwrap();
    ensure((p - 0.86).abs() < 1e-12, format!("fallback gave {p}"))
}

fn c7_validity() -> Result<(), String> {
    let s = generate_synthetic(&GeneratorConfig { n: 7563, event_rate: Some(0.08), ..GeneratorConfig::default() }, 7).unwrap();
    let c = &s.cohort;
    let base = predict_cohort(&BaselineParamVector::reference(), c, &MappingProfile::ma27(), 5.0, "b").unwrap();
    let invalid = base.iter().filter(|p| !p.valid).count() as f64 / c.len() as f64;
    ensure((0.20..=0.30).contains(&invalid), format!("invalid fraction {invalid}"))?;
    let forest = fit_forest(c, &ForestHyperparams { ntree: 30, ..ForestHyperparams::default() }, 1).unwrap();
    let boost = fit_booster(c, &BoostHyperparams { nrounds: 50, ..BoostHyperparams::default() }, 1).unwrap();
    let bundle = ModelBundle {
        horizon: 5.0,
        profile: MappingProfile::ma27(),
        pretrained: BaselineParamVector::reference(),
        finetuned: BaselineParamVector::reference(),
        forest,
        boost,
        weights: EnsembleWeights::new(0.5, 0.3, 0.2).unwrap(),
    };
    let preds = bundle.predict(c).map_err(|e| e.to_string())?;
    for m in ["forest", "boost", "ensemble"] {
        let got = preds.model(m);
        let covered = got.iter().filter(|p| p.is_some_and(|v| (0.0..=1.0).contains(&v))).count();
        ensure(covered == c.len(), format!("{m} scored {covered} of {}", c.len()))?;
    }
    Ok(())
}

fn c8_shap() -> Result<(), String> {
    let bg: Vec<PatientRecord> = (0..100u64)
        .map(|i| {
            let mut r = PatientRecord::new(i, 40.0 + (i % 37) as f64, 1.0, false);
            r.size_mm = Some(5.0 + (i % 11) as f64 * 3.0);
            r.er = Some(i % 3 != 0);
            r
        })
        .collect();
    let mut x = PatientRecord::new(500, 72.0, 1.0, false);
    x.size_mm = Some(45.0);
    x.er = Some(false);
    let constant = |_: &PatientRecord| Some(0.87);
    let res = shap_values(&constant, &x, &bg, 200, 8).map_err(|e| e.to_string())?;
    ensure(res.phi.iter().all(|p| *p == 0.0), "constant model has nonzero attributions")?;

    let additive = |r: &PatientRecord| Some(0.95 - 0.003 * r.age - 0.002 * r.size_mm.unwrap_or(0.0) + 0.04 * r.er.map_or(0.0, f64::from));
    let res = shap_values(&additive, &x, &bg, 200, 8).map_err(|e| e.to_string())?;
    let mean = |f: &dyn Fn(&PatientRecord) -> f64| bg.iter().map(f).sum::<f64>() / bg.len() as f64;
    let exact: HashMap<&str, f64> = HashMap::from([
        ("age", -0.003 * (72.0 - mean(&|r| r.age))),
        ("size_mm", -0.002 * (45.0 - mean(&|r| r.size_mm.unwrap()))),
        ("er", 0.04 * (0.0 - mean(&|r| r.er.map_or(0.0, f64::from)))),
    ]);
    for (j, f) in res.features.iter().enumerate() {
        let want = exact.get(f.name()).copied().unwrap_or(0.0);
        ensure((res.phi[j] - want).abs() <= 3.0 * res.se[j] + 1e-12, format!("{}: {} vs {want} (se {})", f.name(), res.phi[j], res.se[j]))?;
    }
    let residual = res.phi.iter().sum::<f64>() - (res.output - res.base_value);
    let se = res.se.iter().map(|s| s * s).sum::<f64>().sqrt();
    ensure(residual.abs() <= 3.0 * se + 1e-12, format!("efficiency residual {residual}, se {se}"))
}

fn reduced_config(seeds: Vec<u64>) -> ExperimentConfig {
    let generator = GeneratorConfig { n: 3000, event_rate: Some(0.08), ..GeneratorConfig::default() };
    let mut cfg = ExperimentConfig {
        cohort: CohortSource::Synthetic { generator, seed: 9 },
        forest_grid: ForestGrid { ntree: vec![50], mtry: vec![3], nodesize: vec![10, 15], splitrule: vec![SplitRule::Logrank], bernstein: true },
        boost_grid: BoostGrid {
            eta: vec![0.05],
            max_depth: vec![2],
            subsample: vec![1.0],
            colsample_bytree: vec![1.0],
            lambda: vec![0.1],
            nrounds: vec![100],
        },
        seeds,
        bootstrap: 50,
        bo_evaluations: 15,
        ..ExperimentConfig::default()
    };
    cfg.nelder_mead.max_evals = 200;
    cfg
}

fn median_ici(exp: &Experiment, model: &str) -> f64 {
    let s = exp.report.summary.iter().find(|s| s.model == model && s.subset == "all" && s.metric == "ici").unwrap();
    s.median.unwrap()
}

fn c9_rose() -> Result<(), String> {
    let c = generate_synthetic(&GeneratorConfig { n: 4000, emit_node_count: true, ..GeneratorConfig::default() }, 9).unwrap().cohort;
    let out = rose_resample(&c, &RoseConfig { seed: 9, ..RoseConfig::default() }).map_err(|e| e.to_string())?;
    let rate = out.event_count() as f64 / out.len() as f64;
    ensure((rate - 0.5).abs() <= 3.0 * (0.25f64 / out.len() as f64).sqrt(), format!("event proportion {rate}"))?;
    let mut masks: HashMap<MissingMask, usize> = HashMap::new();
    for r in &c.records {
        *masks.entry(r.missing_mask()).or_default() += 1;
    }
    for r in &out.records {
        let src = &c.records[r.id as usize];
        ensure(r.missing_mask() == src.missing_mask() && masks.contains_key(&r.missing_mask()), "missingness mask changed")?;
        ensure(
            (r.nodal_stage, r.laterality, r.er, r.pr, r.grade, r.radiotherapy, r.chemotherapy, r.trastuzumab)
                == (src.nodal_stage, src.laterality, src.er, src.pr, src.grade, src.radiotherapy, src.chemotherapy, src.trastuzumab),
            "categorical value not copied",
        )?;
    }
    let off = run_experiment(&reduced_config(vec![1, 2, 3])).map_err(|e| e.to_string())?;
    let on = run_experiment(&ExperimentConfig { rebalance: true, ..reduced_config(vec![1, 2, 3]) }).map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    let mut worse = true;
    for m in ["forest", "boost"] {
        let (a, b) = (median_ici(&off, m), median_ici(&on, m));
        detail.push(format!("{m} {a:.4} -> {b:.4}"));
        worse &= b > a;
    }
    ensure(worse, format!("ICI did not degrade with rebalancing: {}", detail.join(", ")))
}

fn c10_protocol(full: &Result<(Experiment, Duration), String>) -> Result<(), String> {
    let cfg = reduced_config(vec![5, 6]);
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let exp = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().unwrap();
        write_experiment(&exp, dir.path()).map_err(|e| e.to_string())?;
        bytes.push(std::fs::read(dir.path().join("report.json")).unwrap());
    }
    ensure(bytes[0] == bytes[1], "report.json differs between identical runs")?;
    let (exp, took) = full.as_ref().map_err(|e| format!("full run failed: {e}"))?;
    ensure(exp.seeds.len() == 10 && exp.cohort.len() == 7563, "full run has the wrong shape")?;
    for s in &exp.seeds {
        let split = survtune_core::cohort::split_cohort(&exp.cohort, s.seed).unwrap();
        check_split(&exp.cohort, &split).map_err(|e| e.to_string())?;
    }
    ensure(*took < Duration::from_secs(30 * 60), format!("full run took {took:.0?}"))
}

fn c11_grids(full: &Result<(Experiment, Duration), String>) -> Result<(), String> {
    let cfg = ExperimentConfig::default();
    let (f, b) = (cfg.forest_grid.points().len(), cfg.boost_grid.points().len());
    ensure(f == 72 && b == 32, format!("grid sizes {f} and {b}"))?;
    let (exp, _) = full.as_ref().map_err(|e| format!("full run failed: {e}"))?;
    for s in &exp.seeds {
        let (fe, be) = (s.forest_grid.entries.len(), s.boost_grid.entries.len());
        ensure(fe == 72 && be == 32, format!("seed {} evaluated {fe} and {be} configurations", s.seed))?;
    }
    Ok(())
}

fn run(name: &str, f: impl FnOnce() -> Result<(), String>) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
    });
    let mut out = std::io::stdout().lock();
    match &outcome {
        Ok(()) => writeln!(out, "PASS {name} ({:.1?})", start.elapsed()).unwrap(),
        Err(e) => writeln!(out, "FAIL {name}: {e}").unwrap(),
    }
    outcome.is_ok()
}

#[test]
fn acceptance_criteria() {
    let full = {
        let start = Instant::now();
        run_experiment(&ExperimentConfig::default()).map(|e| (e, start.elapsed())).map_err(|e| e.to_string())
    };
    if let Ok((_, took)) = &full {
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
        writeln!(std::io::stdout().lock(), "full default run: {took:.1?} on {cores} core(s)").unwrap();
    }
    let results = [
        run("1 auc matches pair enumeration", c1_auc_oracle),
        run("2 kaplan-meier hand check and flip symmetry", c2_kaplan_meier),
        run("3 calibration of true and shifted probabilities", c3_calibration),
        run("4 cox gradient against finite differences", c4_gradient),
        run("5 fine-tuning recovers calibration", c5_fine_tuning),
        run("6 ensemble search and fallback", c6_ensemble),
        run("7 validity stratification", c7_validity),
        run("8 shap correctness", c8_shap),
        run("9 rose balance and end-to-end effect", c9_rose),
        run("10 determinism, leakage and full-run time", || c10_protocol(&full)),
        run("11 grid sizes", || c11_grids(&full)),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
