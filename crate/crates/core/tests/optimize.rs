use proptest::prelude::*;
use survtune_core::optimize::*;

#[test]
fn bayesian_optimization_matches_a_fine_grid() {
    let f = |x: &[f64]| -(x[0] - 0.3).powi(2);
    let cfg = BOConfig { evaluations: 20, ..BOConfig::new(vec![(0.0, 1.0)], 3) };
    let res = bayes_opt_maximize(f, &cfg).unwrap();
    let (gx, gf) = grid_maximize(f, &[(0.0, 1.0)], 0.01).unwrap();
    assert!((gx[0] - 0.3).abs() < 1e-9);
    assert!(res.fx >= gf - 1e-4, "bo {:?} grid {gf}", res.x);
    assert_eq!(res.history.len(), 20);
}

#[test]
fn bayesian_optimization_in_two_dimensions() {
    let f = |x: &[f64]| -((x[0] - 0.7).powi(2) + 2.0 * (x[1] - 0.2).powi(2));
    let cfg = BOConfig { evaluations: 40, ..BOConfig::new(vec![(0.0, 1.0), (0.0, 1.0)], 8) };
    let res = bayes_opt_maximize(f, &cfg).unwrap();
    let (_, gf) = grid_maximize(f, &[(0.0, 1.0), (0.0, 1.0)], 0.01).unwrap();
    assert!(res.fx >= gf - 2e-3, "{:?} {}", res.x, res.fx);
    assert_eq!(res, bayes_opt_maximize(f, &cfg).unwrap());
}

#[test]
fn nelder_mead_minimizes_rosenbrock() {
    let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
    let cfg = NMConfig { default_step: 0.5, max_evals: 5000, spread_tol: 1e-14, ..NMConfig::default() };
    let res = nelder_mead(f, &[-1.2, 1.0], &cfg).unwrap();
    assert!((res.x[0] - 1.0).abs() < 1e-3 && (res.x[1] - 1.0).abs() < 1e-3, "{:?}", res.x);
    assert!(res.evaluations <= 5000 + 3);
}

proptest! {
    #[test]
    fn nelder_mead_never_ends_above_its_start(
        x0 in proptest::collection::vec(-3.0f64..3.0, 1..6),
        c in proptest::collection::vec(-2.0f64..2.0, 6),
        evals in 1usize..300,
    ) {
        let f = |x: &[f64]| x.iter().zip(&c).map(|(a, b)| (a - b).powi(2) + (3.0 * a).sin()).sum::<f64>();
        let cfg = NMConfig { max_evals: evals, ..NMConfig::default() };
        let res = nelder_mead(f, &x0, &cfg).unwrap();
        prop_assert!(res.fx <= f(&x0));
        prop_assert_eq!(res.fx, f(&res.x));
        prop_assert!(res.trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
