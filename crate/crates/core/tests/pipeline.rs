use std::collections::HashSet;

use survtune_core::cohort::GeneratorConfig;
use survtune_core::forest::SplitRule;
use survtune_core::pipeline::*;
use survtune_core::Error;

fn small_config(seeds: Vec<u64>) -> ExperimentConfig {
    sized_config(1500, seeds)
}

fn sized_config(n: usize, seeds: Vec<u64>) -> ExperimentConfig {
    let generator = GeneratorConfig { n, event_rate: Some(0.08), ..GeneratorConfig::default() };
    let mut cfg = ExperimentConfig {
        cohort: CohortSource::Synthetic { generator, seed: 11 },
        forest_grid: ForestGrid { ntree: vec![10, 20], mtry: vec![3], nodesize: vec![10], splitrule: vec![SplitRule::Logrank], bernstein: true },
        boost_grid: BoostGrid {
            eta: vec![0.1],
            max_depth: vec![2],
            subsample: vec![1.0],
            colsample_bytree: vec![1.0],
            lambda: vec![0.1],
            nrounds: vec![30, 60],
        },
        seeds,
        bootstrap: 50,
        bo_evaluations: 12,
        ..ExperimentConfig::default()
    };
    cfg.nelder_mead.max_evals = 150;
    cfg
}

#[test]
fn small_experiment_is_consistent_and_reproducible() {
    let cfg = small_config(vec![3, 4]);
    let exp = run_experiment(&cfg).unwrap();
    let r = &exp.report;
    assert_eq!(r.per_seed.len(), 2);
    for tallies in r.chosen.votes.values() {
        assert_eq!(tallies.iter().map(|t| t.count).sum::<usize>(), 2);
    }
    for s in &r.summary {
        if let (Some(m), Some(lo), Some(hi)) = (s.median, s.min, s.max) {
            assert!(lo <= m && m <= hi);
        }
    }
    let w = r.weights.as_array();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for s in &exp.seeds {
        assert_eq!(s.counts.a + s.counts.b + s.counts.c, 1500);
        // ML models score every validation record.
        for row in s.metrics.iter().filter(|m| m.subset == "all" && ["forest", "boost", "ensemble"].contains(&m.model.as_str())) {
            assert_eq!(row.n, s.counts.c);
        }
        let base = s.metrics.iter().find(|m| m.model == "baseline_finetuned" && m.subset == "all").unwrap();
        assert_eq!(base.n, s.counts.c - s.invalid_c);
    }

    let dir = tempfile::tempdir().unwrap();
    write_experiment(&exp, dir.path()).unwrap();
    let again = run_experiment(&cfg).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    write_experiment(&again, dir2.path()).unwrap();
    for f in ["report.json", "metrics.csv", "predictions.csv"] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(dir2.path().join(f)).unwrap(), "{f}");
    }
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.lines().skip(1).all(|l| l.starts_with("3,") || l.starts_with("4,")));

    let bundle = ModelBundle::load(&dir.path().join("models")).unwrap();
    let p1 = bundle.predict(&exp.cohort).unwrap();
    let p2 = exp.bundle.predict(&exp.cohort).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(bundle.forest.hyperparams, r.chosen.forest);
}

#[test]
fn validation_fold_is_never_fitted() {
    let cfg = small_config(vec![7]);
    let cohort = cfg.cohort.load(cfg.horizon).unwrap();
    let split = survtune_core::cohort::split_cohort(&cohort, 7).unwrap();
    check_split(&cohort, &split).unwrap();
    let ids = |c: &survtune_core::Cohort| c.ids().into_iter().collect::<HashSet<u64>>();
    let ab = ids(&split.train_a).union(&ids(&split.test_b)).copied().collect();
    assert!(check_fit_set(&split.train_a.concat(&split.test_b), &ab, &ids(&split.valid_c), "refit").is_ok());
    let leaked = split.train_a.concat(&split.valid_c);
    assert!(matches!(check_fit_set(&leaked, &ab, &ids(&split.valid_c), "refit"), Err(Error::Leakage(_))));

    let mut bad = split.clone();
    bad.test_b.records.push(split.valid_c.records[0].clone());
    assert!(matches!(check_split(&cohort, &bad), Err(Error::Leakage(_))));
}

#[test]
fn config_validation_and_hash() {
    let mut cfg = ExperimentConfig::default();
    assert!(cfg.validate().is_ok());
    let h = cfg.hash();
    cfg.output_dir = Some("elsewhere".into());
    assert_eq!(cfg.hash(), h);
    cfg.seeds.clear();
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let parsed = ExperimentConfig::from_json(r#"{"objective": "auc", "seeds": [1, 2]}"#).unwrap();
    assert_eq!(parsed.seeds, vec![1, 2]);
    assert_eq!(parsed.forest_grid.points().len(), 72);
    assert!(ExperimentConfig::from_json(r#"{"objective": "brier"}"#).is_err());
}

#[test]
fn external_validation_on_shifted_hazard_worsens_calibration() {
    let cfg = sized_config(10000, vec![1, 2, 3]);
    let exp = run_experiment(&cfg).unwrap();
    let profile = cfg.mapping_profile().unwrap();
    let c_size = exp.seeds[0].counts.c;
    let ici = |r: &ExternalReport, m: &str| r.metrics.iter().find(|x| x.model == m && x.metric == "ici").unwrap().ci.clone().unwrap();
    let mut same_ici = Vec::new();
    // External draws sized like C, so the small-sample bias of the ICI matches.
    for draw in [21, 22, 23] {
        let gen = GeneratorConfig { n: c_size, event_rate: Some(0.08), ..GeneratorConfig::default() };
        let same = survtune_core::cohort::generate_synthetic(&gen, draw).unwrap().cohort;
        let shifted_gen = GeneratorConfig { hazard_multiplier: 1.5, ..gen.clone() };
        let shifted = survtune_core::cohort::generate_synthetic(&shifted_gen, draw).unwrap().cohort;
        let a = external_validate(&exp.bundle, &same, &profile, 5.0, 100, 1).unwrap();
        let b = external_validate(&exp.bundle, &shifted, &profile, 5.0, 100, 1).unwrap();
        for m in MODELS {
            assert!(ici(&b, m).estimate > ici(&a, m).estimate, "{m}");
            let auc = a.metrics.iter().find(|x| x.model == m && x.metric == "auc").unwrap().ci.clone().unwrap();
            assert!(auc.lo <= auc.estimate && auc.estimate <= auc.hi);
        }
        same_ici.push(ici(&a, "baseline_finetuned").estimate);
    }
    let external = same_ici.iter().sum::<f64>() / 3.0;
    let internal = exp.report.summary.iter().find(|s| s.model == "baseline_finetuned" && s.subset == "all" && s.metric == "ici").unwrap();
    let internal = internal.median.unwrap();
    assert!((external - internal).abs() < 0.01, "external {external}, internal {internal}");
}
