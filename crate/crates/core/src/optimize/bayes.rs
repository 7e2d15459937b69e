//! Gaussian-process Bayesian optimization with expected improvement.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BOConfig {
    /// Box bounds, one `(lo, hi)` pair per dimension.
    pub bounds: Vec<(f64, f64)>,
    /// Uniform random points in the initial design.
    pub initial_random: usize,
    /// Points always evaluated first (clamped to the bounds).
    pub initial_points: Vec<Vec<f64>>,
    /// Total objective evaluations, initial design included.
    pub evaluations: usize,
    /// Quasi-random candidates scored by EI per iteration.
    pub candidates: usize,
    /// Exploration jitter subtracted from the improvement.
    pub xi: f64,
    pub noise: f64,
    /// Squared-exponential length-scales (unit-cube units) tried by marginal likelihood.
    pub length_scales: Vec<f64>,
    pub seed: u64,
}

impl BOConfig {
    pub fn new(bounds: Vec<(f64, f64)>, seed: u64) -> Self {
        let dim = bounds.len();
        BOConfig {
            bounds,
            initial_random: dim + 1,
            initial_points: Vec::new(),
            evaluations: 60,
            candidates: 1024,
            xi: 0.01,
            noise: 1e-6,
            length_scales: vec![0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5],
            seed,
        }
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension();
        if d == 0 {
            return Err(Error::Config("Bayesian optimization needs at least one dimension".into()));
        }
        if self.bounds.iter().any(|(lo, hi)| !lo.is_finite() || !hi.is_finite() || hi < lo) {
            return Err(Error::Config("Bayesian optimization bounds must be finite and ordered".into()));
        }
        if self.initial_random < d + 1 {
            return Err(Error::Config(format!("need at least {} initial random points", d + 1)));
        }
        if self.evaluations <= self.initial_random {
            return Err(Error::Config("evaluations must exceed the initial random design".into()));
        }
        if self.candidates < 1000 {
            return Err(Error::Config("at least 1000 EI candidates per iteration are required".into()));
        }
        if self.length_scales.is_empty() || self.length_scales.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("length-scale grid must be nonempty and positive".into()));
        }
        if self.initial_points.iter().any(|p| p.len() != d) {
            return Err(Error::Config("initial point dimension mismatch".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BOResult {
    pub x: Vec<f64>,
    pub fx: f64,
    /// Every evaluated point with its value, in evaluation order.
    pub history: Vec<(Vec<f64>, f64)>,
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

const PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

/// Halton points in the unit cube with a random Cranley-Patterson shift.
fn halton_shifted(n: usize, dim: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    (1..=n as u64)
        .map(|i| {
            (0..dim)
                .map(|d| {
                    let base = PRIMES[d % PRIMES.len()];
                    (radical_inverse(i, base) + shift[d]).fract()
                })
                .collect()
        })
        .collect()
}

struct Gp {
    points: Vec<Vec<f64>>,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    length: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Gp {
    fn fit(points: &[Vec<f64>], y: &DVector<f64>, length: f64, noise: f64) -> Option<(Gp, f64)> {
        let n = points.len();
        let k = DMatrix::from_fn(n, n, |i, j| {
            let v = (-0.5 * sq_dist(&points[i], &points[j]) / (length * length)).exp();
            if i == j { v + noise } else { v }
        });
        let chol = k.cholesky()?;
        let alpha = chol.solve(y);
        let log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Some((Gp { points: points.to_vec(), chol, alpha, length }, lml))
    }

    fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|p| (-0.5 * sq_dist(p, x) / (self.length * self.length)).exp()),
        );
        let mean = k.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&k).unwrap_or_else(|| DVector::zeros(k.len()));
        let var = (1.0 - v.dot(&v)).max(0.0);
        (mean, var.sqrt())
    }
}

/// Maximize `f` over the box in `cfg`. Returns the best point evaluated.
///
/// When all observations are equal the GP carries no information and the next
/// proposal is drawn uniformly at random instead.
pub fn bayes_opt_maximize<F>(f: F, cfg: &BOConfig) -> Result<BOResult>
where
    F: Fn(&[f64]) -> f64,
{
    cfg.validate()?;
    let dim = cfg.dimension();
    let mut rng = rng::seeded(cfg.seed);
    let to_unit = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(&cfg.bounds)
            .map(|(v, (lo, hi))| if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 })
            .collect()
    };
    let from_unit = |u: &[f64]| -> Vec<f64> { u.iter().zip(&cfg.bounds).map(|(v, (lo, hi))| lo + v * (hi - lo)).collect() };

    let mut units: Vec<Vec<f64>> = Vec::new();
    let mut history: Vec<(Vec<f64>, f64)> = Vec::new();
    let evaluate = |u: Vec<f64>, units: &mut Vec<Vec<f64>>, history: &mut Vec<(Vec<f64>, f64)>| {
        let x = from_unit(&u);
        let v = f(&x);
        units.push(u);
        history.push((x, v));
    };

    for p in &cfg.initial_points {
        if history.len() >= cfg.evaluations {
            break;
        }
        evaluate(to_unit(p), &mut units, &mut history);
    }
    for _ in 0..cfg.initial_random {
        if history.len() >= cfg.evaluations {
            break;
        }
        let u: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        evaluate(u, &mut units, &mut history);
    }

    while history.len() < cfg.evaluations {
        let finite: Vec<f64> = history.iter().map(|h| h.1).filter(|v| v.is_finite()).collect();
        let (mean, sd) = if finite.is_empty() {
            (0.0, 0.0)
        } else {
            let m = finite.iter().sum::<f64>() / finite.len() as f64;
            let var = finite.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / finite.len() as f64;
            (m, var.sqrt())
        };
        let proposal = if sd <= 1e-12 * (1.0 + mean.abs()) {
            (0..dim).map(|_| rng.random::<f64>()).collect()
        } else {
            let worst = finite.iter().cloned().fold(f64::INFINITY, f64::min);
            let y = DVector::from_iterator(
                history.len(),
                history.iter().map(|h| (if h.1.is_finite() { h.1 } else { worst } - mean) / sd),
            );
            let best_y = y.max();
            let gp = cfg
                .length_scales
                .iter()
                .filter_map(|&l| Gp::fit(&units, &y, l, cfg.noise))
                .fold(None::<(Gp, f64)>, |acc, (gp, lml)| match acc {
                    Some((_, best)) if best >= lml => acc,
                    _ => Some((gp, lml)),
                });
            let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            match gp {
                None => (0..dim).map(|_| rng.random::<f64>()).collect(),
                Some((gp, _)) => {
                    let mut best = (f64::NEG_INFINITY, Vec::new());
                    for c in halton_shifted(cfg.candidates, dim, &shift) {
                        let (mu, s) = gp.predict(&c);
                        let imp = mu - best_y - cfg.xi;
                        let ei = if s > 1e-12 {
                            let z = imp / s;
                            imp * normal_cdf(z) + s * normal_pdf(z)
                        } else {
                            imp.max(0.0)
                        };
                        if ei > best.0 {
                            best = (ei, c);
                        }
                    }
                    best.1
                }
            }
        };
        evaluate(proposal, &mut units, &mut history);
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    for (x, v) in &history {
        if !v.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| *v > b.1) {
            best = Some((x.clone(), *v));
        }
    }
    let (x, fx) = best.ok_or_else(|| Error::Fit("objective was not finite at any evaluated point".into()))?;
    Ok(BOResult { x, fx, history })
}

/// Exhaustive grid maximization over a box of dimension 1 or 2 with the given
/// resolution per axis. Used as an oracle for low-dimensional searches.
pub fn grid_maximize<F>(f: F, bounds: &[(f64, f64)], resolution: f64) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    if bounds.is_empty() || bounds.len() > 2 {
        return Err(Error::Config("grid oracle supports 1 or 2 dimensions".into()));
    }
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        let steps = ((hi - lo) / resolution).round() as usize;
        (0..=steps).map(|k| lo + (hi - lo) * k as f64 / steps.max(1) as f64).collect()
    };
    let axes: Vec<Vec<f64>> = bounds.iter().map(|b| axis(*b)).collect();
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    let mut visit = |x: Vec<f64>| {
        let v = f(&x);
        if v > best.1 {
            best = (x, v);
        }
    };
    if axes.len() == 1 {
        for a in &axes[0] {
            visit(vec![*a]);
        }
    } else {
        for a in &axes[0] {
            for b in &axes[1] {
                visit(vec![*a, *b]);
            }
        }
    }
    Ok(best)
}
