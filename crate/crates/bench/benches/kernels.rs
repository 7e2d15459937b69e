use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use survtune_core::boost::{fit_booster, BoostHyperparams};
use survtune_core::cohort::{generate_synthetic, GeneratorConfig};
use survtune_core::forest::{fit_forest, ForestHyperparams};
use survtune_core::metrics::{ici, ipcw_auc};
use survtune_core::Cohort;

fn cohort(n: usize) -> (Cohort, Vec<f64>) {
    let s = generate_synthetic(&GeneratorConfig { n, event_rate: Some(0.08), ..GeneratorConfig::default() }, 1).unwrap();
    (s.cohort, s.true_survival)
}

fn metrics(c: &mut Criterion) {
    let mut g = c.benchmark_group("metrics");
    for n in [1_000, 5_000] {
        let (c, truth) = cohort(n);
        let (times, events) = (c.times(), c.events());
        let risks: Vec<f64> = truth.iter().map(|p| 1.0 - p).collect();
        g.bench_with_input(BenchmarkId::new("ipcw_auc", n), &n, |b, _| {
            b.iter(|| ipcw_auc(black_box(&risks), &times, &events, 5.0).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("ici", n), &n, |b, _| b.iter(|| ici(black_box(&truth), &times, &events, 5.0).unwrap()));
    }
    g.finish();
}

fn learners(c: &mut Criterion) {
    let (train, _) = cohort(4_000);
    let mut g = c.benchmark_group("learners");
    g.sample_size(10);
    let forest = ForestHyperparams { ntree: 100, mtry: 4, nodesize: 5, ..ForestHyperparams::default() };
    g.bench_function("fit_forest_100_trees", |b| b.iter(|| fit_forest(black_box(&train), &forest, 1).unwrap()));
    let boost = BoostHyperparams { nrounds: 200, max_depth: 5, ..BoostHyperparams::default() };
    g.bench_function("fit_booster_200_rounds", |b| b.iter(|| fit_booster(black_box(&train), &boost, 1).unwrap()));
    let fitted = fit_forest(&train, &forest, 1).unwrap();
    g.bench_function("predict_forest", |b| b.iter(|| fitted.predict_cohort(black_box(&train), 5.0)));
    g.finish();
}

criterion_group!(benches, metrics, learners);
criterion_main!(benches);
