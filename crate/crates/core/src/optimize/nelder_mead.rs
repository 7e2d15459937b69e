use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NMConfig {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Per-coordinate initial step; empty means `default_step` everywhere.
    pub steps: Vec<f64>,
    pub default_step: f64,
    pub max_evals: usize,
    /// Stop once `f(worst) - f(best)` over the simplex drops below this.
    pub spread_tol: f64,
}

impl Default for NMConfig {
    fn default() -> Self {
        NMConfig {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            steps: Vec::new(),
            default_step: 0.05,
            max_evals: 2000,
            spread_tol: 1e-6,
        }
    }
}

impl NMConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let positive = [self.reflection, self.expansion, self.contraction, self.shrink, self.default_step];
        if positive.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::Config("Nelder-Mead coefficients and steps must be positive".into()));
        }
        if self.expansion <= self.reflection {
            return Err(Error::Config("Nelder-Mead expansion must exceed reflection".into()));
        }
        if self.contraction >= 1.0 || self.shrink >= 1.0 {
            return Err(Error::Config("Nelder-Mead contraction and shrink must be < 1".into()));
        }
        if !self.steps.is_empty() && self.steps.len() != dim {
            return Err(Error::Config(format!("expected {dim} initial steps, got {}", self.steps.len())));
        }
        Ok(())
    }

    fn step(&self, i: usize) -> f64 {
        self.steps.get(i).copied().unwrap_or(self.default_step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NMResult {
    pub x: Vec<f64>,
    pub fx: f64,
    /// Best objective value after each iteration (nonincreasing).
    pub trace: Vec<f64>,
    pub evaluations: usize,
    pub iterations: usize,
}

/// Vertices of a simplex together with their objective values.
#[derive(Debug, Clone)]
pub(crate) struct Simplex {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

impl Simplex {
    /// Order vertices best-first; ties keep their current relative order.
    fn sort(&mut self) {
        let mut order: Vec<usize> = (0..self.points.len()).collect();
        order.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        self.points = order.iter().map(|&i| self.points[i].clone()).collect();
        self.values = order.iter().map(|&i| self.values[i]).collect();
    }

    fn centroid(&self) -> Vec<f64> {
        let n = self.points.len() - 1;
        let mut c = vec![0.0; self.points[0].len()];
        for p in &self.points[..n] {
            for (ci, pi) in c.iter_mut().zip(p) {
                *ci += pi / n as f64;
            }
        }
        c
    }

    /// Pull every vertex toward the best one by `factor`.
    pub fn shrink_points(&mut self, factor: f64) {
        let best = self.points[0].clone();
        for p in self.points.iter_mut().skip(1) {
            for (pi, bi) in p.iter_mut().zip(&best) {
                *pi = bi + factor * (*pi - bi);
            }
        }
    }

    /// Absolute volume `|det(x_i - x_0)| / n!`.
    #[cfg(test)]
    pub fn volume(&self) -> f64 {
        let n = self.points.len() - 1;
        let m = nalgebra::DMatrix::from_fn(n, n, |r, c| self.points[c + 1][r] - self.points[0][r]);
        let fact: f64 = (1..=n).map(|k| k as f64).product();
        m.determinant().abs() / fact
    }
}

fn along(c: &[f64], towards: &[f64], coef: f64) -> Vec<f64> {
    c.iter().zip(towards).map(|(ci, ti)| ci + coef * (ti - ci)).collect()
}

/// Minimize `f` from `x0`. Non-finite values met during the search count as `+inf`.
pub fn nelder_mead<F>(f: F, x0: &[f64], cfg: &NMConfig) -> Result<NMResult>
where
    F: Fn(&[f64]) -> f64,
{
    let dim = x0.len();
    if dim == 0 {
        return Err(Error::Config("Nelder-Mead needs at least one dimension".into()));
    }
    cfg.validate(dim)?;
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_finite() { v } else { f64::INFINITY }
    };
    let f0 = eval(x0);
    if !f0.is_finite() {
        return Err(Error::Domain("objective is not finite at the starting point".into()));
    }
    let mut points = vec![x0.to_vec()];
    let mut values = vec![f0];
    for i in 0..dim {
        let mut p = x0.to_vec();
        p[i] += cfg.step(i);
        values.push(eval(&p));
        points.push(p);
    }
    let mut s = Simplex { points, values };
    s.sort();
    let mut trace = Vec::new();
    let mut iterations = 0;

    loop {
        let spread = s.values[dim] - s.values[0];
        if spread < cfg.spread_tol || evals.get() >= cfg.max_evals {
            break;
        }
        iterations += 1;
        let c = s.centroid();
        let worst = s.points[dim].clone();
        let xr = along(&c, &worst, -cfg.reflection);
        let fr = eval(&xr);
        if fr < s.values[0] {
            let xe = along(&c, &xr, cfg.expansion / cfg.reflection);
            let fe = eval(&xe);
            if fe < fr {
                s.points[dim] = xe;
                s.values[dim] = fe;
            } else {
                s.points[dim] = xr;
                s.values[dim] = fr;
            }
        } else if fr < s.values[dim - 1] {
            s.points[dim] = xr;
            s.values[dim] = fr;
        } else {
            let (xc, fc, accept) = if fr < s.values[dim] {
                let xc = along(&c, &xr, cfg.contraction);
                let fc = eval(&xc);
                (xc, fc, fc <= fr)
            } else {
                let xc = along(&c, &worst, cfg.contraction);
                let fc = eval(&xc);
                (xc, fc, fc < s.values[dim])
            };
            if accept {
                s.points[dim] = xc;
                s.values[dim] = fc;
            } else {
                s.shrink_points(cfg.shrink);
                for i in 1..=dim {
                    s.values[i] = eval(&s.points[i]);
                }
            }
        }
        s.sort();
        trace.push(s.values[0]);
    }

    Ok(NMResult { x: s.points[0].clone(), fx: s.values[0], trace, evaluations: evals.get(), iterations })
}
