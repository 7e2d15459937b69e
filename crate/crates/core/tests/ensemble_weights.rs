use proptest::prelude::*;
use survtune_core::cohort::{generate_synthetic, GeneratorConfig};
use survtune_core::ensemble::*;
use survtune_core::metrics::Objective;
use survtune_core::optimize::BOConfig;
use survtune_core::rng;
use rand::Rng;

/// Oracle survival, an overly pessimistic copy of it and pure noise.
fn components(n: usize, seed: u64) -> (survtune_core::Cohort, ComponentPredictions) {
    let cfg = GeneratorConfig { n, event_rate: Some(0.2), ..GeneratorConfig::default() };
    let s = generate_synthetic(&cfg, seed).unwrap();
    let mut r = rng::seeded(seed + 1);
    let preds = ComponentPredictions {
        baseline: s.true_survival.iter().map(|p| Some(*p)).collect(),
        forest: s.true_survival.iter().map(|p| 0.7 * p).collect(),
        boost: (0..n).map(|_| r.random_range(0.3..0.6)).collect(),
    };
    (s.cohort, preds)
}

#[test]
fn oracle_component_dominates_and_search_matches_grid() {
    let (tune, preds) = components(1500, 41);
    let bo = BOConfig { evaluations: 40, ..BOConfig::new(vec![(0.0, 1.0); 2], 7) };
    let res = search_weights(&tune, &preds, Objective::Ici, 5.0, &bo).unwrap();
    assert!(res.weights.w_baseline >= 0.8, "{:?}", res.weights);
    assert!(res.loss <= res.vertex_losses.iter().cloned().fold(f64::INFINITY, f64::min) + 1e-12);

    let (times, events) = (tune.times(), tune.events());
    let mut grid_best = f64::INFINITY;
    for i in 0..=100 {
        for j in 0..=100 - i {
            let w = EnsembleWeights { w_baseline: 1.0 - (i + j) as f64 * 0.01, w_forest: i as f64 * 0.01, w_boost: j as f64 * 0.01 };
            grid_best = grid_best.min(Objective::Ici.loss(&preds.combined(&w), &times, &events, 5.0).unwrap());
        }
    }
    assert!(res.loss <= grid_best + 0.002, "search {} grid {grid_best}", res.loss);
}

#[test]
fn identical_components_make_the_loss_flat() {
    let (tune, mut preds) = components(800, 42);
    preds.forest = preds.baseline.iter().map(|p| p.unwrap()).collect();
    preds.boost = preds.forest.clone();
    let bo = BOConfig { evaluations: 15, ..BOConfig::new(vec![(0.0, 1.0); 2], 1) };
    let res = search_weights(&tune, &preds, Objective::Ici, 5.0, &bo).unwrap();
    let single = Objective::Ici.loss(&preds.forest, &tune.times(), &tune.events(), 5.0).unwrap();
    assert!((res.loss - single).abs() <= 0.002);
    assert!(res.vertex_losses.iter().all(|v| (v - single).abs() < 1e-12));
}

#[test]
fn invalid_baseline_uses_renormalized_weights() {
    let w = EnsembleWeights::new(0.5, 0.3, 0.2).unwrap();
    let p = combine_probs([None, Some(0.9), Some(0.8)], &w).unwrap();
    assert!((p - (0.3 * 0.9 + 0.2 * 0.8) / 0.5).abs() < 1e-12);
    assert!(EnsembleWeights::new(0.5, 0.3, 0.3).is_err());
}

fn weights() -> impl Strategy<Value = EnsembleWeights> {
    (0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(u, v)| EnsembleWeights::from_unit_square(u, v))
}

proptest! {
    #[test]
    fn unit_square_maps_onto_the_simplex(w in weights()) {
        prop_assert!(w.validate().is_ok());
    }

    #[test]
    fn combination_stays_within_the_components(
        w in weights(),
        p in proptest::option::of(0.0f64..=1.0),
        q in 0.0f64..=1.0,
        r in 0.0f64..=1.0,
    ) {
        let c = combine_probs([p, Some(q), Some(r)], &w).unwrap();
        let present: Vec<f64> = [p, Some(q), Some(r)].into_iter().flatten().collect();
        let lo = present.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = present.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(c >= lo - 1e-12 && c <= hi + 1e-12);
    }

    #[test]
    fn fallback_ignores_the_baseline_weight(a in 0.0f64..=1.0, b in 0.01f64..=1.0, q in 0.0f64..=1.0, r in 0.0f64..=1.0) {
        // Two weight vectors that agree on the forest:boost ratio give the same fallback.
        let s1 = 1.0 - a;
        let w1 = EnsembleWeights { w_baseline: a, w_forest: s1 * b / (1.0 + b), w_boost: s1 / (1.0 + b) };
        let w2 = EnsembleWeights { w_baseline: 0.0, w_forest: b / (1.0 + b), w_boost: 1.0 / (1.0 + b) };
        prop_assume!(s1 > 1e-6);
        let x = combine_probs([None, Some(q), Some(r)], &w1).unwrap();
        let y = combine_probs([None, Some(q), Some(r)], &w2).unwrap();
        prop_assert!((x - y).abs() < 1e-12);
    }
}
