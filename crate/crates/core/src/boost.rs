//! Gradient-boosted regression trees under the Cox partial likelihood
//! (Breslow ties), with survival probabilities from a Breslow baseline hazard.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, PatientRecord};
use crate::error::{Error, Result};
use crate::features::EncoderSpec;
use crate::metrics::StepFunction;
use crate::rng;
use crate::tree::{better, BinSplit, BinnedMatrix, Node, Tree, MISSING_BIN};

pub const BOOSTER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostHyperparams {
    pub eta: f64,
    pub max_depth: usize,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub lambda: f64,
    pub nrounds: usize,
    #[serde(default = "default_min_child_weight")]
    pub min_child_weight: f64,
}

fn default_min_child_weight() -> f64 {
    1.0
}

impl Default for BoostHyperparams {
    fn default() -> Self {
        BoostHyperparams {
            eta: 0.05,
            max_depth: 2,
            subsample: 1.0,
            colsample_bytree: 1.0,
            lambda: 0.1,
            nrounds: 500,
            min_child_weight: 1.0,
        }
    }
}

impl BoostHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || self.max_depth == 0 || self.nrounds == 0 {
            return Err(Error::Config("eta, max_depth and nrounds must be positive".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) || !(self.colsample_bytree > 0.0 && self.colsample_bytree <= 1.0) {
            return Err(Error::Config("subsample and colsample_bytree must lie in (0, 1]".into()));
        }
        if !(self.lambda >= 0.0) || !(self.min_child_weight >= 0.0) {
            return Err(Error::Config("lambda and min_child_weight must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedBooster {
    pub version: u32,
    pub hyperparams: BoostHyperparams,
    pub seed: u64,
    pub encoder: EncoderSpec,
    /// Leaf weights already include the learning rate.
    pub trees: Vec<Tree<f64>>,
    /// Breslow cumulative baseline hazard on the training data.
    pub baseline_hazard: StepFunction,
}

/// Sort order and tie groups of event times used by the Breslow formulas.
struct RiskSets {
    /// Indices sorted by time, descending.
    desc: Vec<usize>,
}

impl RiskSets {
    fn new(times: &[f64]) -> Self {
        let mut desc: Vec<usize> = (0..times.len()).collect();
        desc.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
        RiskSets { desc }
    }

    /// Distinct times ascending as `(time, events, risk-set sum of w)`, and
    /// the group each record belongs to.
    fn groups(&self, times: &[f64], events: &[bool], w: &[f64]) -> (Vec<(f64, f64, f64)>, Vec<usize>) {
        let n = times.len();
        let mut groups = Vec::new();
        let mut member = vec![0usize; n];
        let mut s = 0.0;
        let mut i = 0;
        while i < n {
            let t = times[self.desc[i]];
            let mut j = i;
            let mut d = 0.0;
            while j < n && times[self.desc[j]] == t {
                s += w[self.desc[j]];
                d += events[self.desc[j]] as u8 as f64;
                j += 1;
            }
            groups.push((t, d, s));
            i = j;
        }
        groups.reverse();
        let mut k = 0;
        for &idx in self.desc.iter().rev() {
            while groups[k].0 != times[idx] {
                k += 1;
            }
            member[idx] = k;
        }
        (groups, member)
    }
}

/// Gradient and diagonal Hessian of the Breslow negative log partial
/// likelihood with respect to per-record scores.
pub fn cox_grad_hess(eta: &[f64], times: &[f64], events: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    if !events.iter().any(|e| *e) {
        return Err(Error::UndefinedMetric("Cox gradient needs at least one event".into()));
    }
    Ok(grad_hess_with(&RiskSets::new(times), eta, times, events))
}

fn grad_hess_with(rs: &RiskSets, eta: &[f64], times: &[f64], events: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();
    let (groups, member) = rs.groups(times, events, &w);
    // Cumulative sums over event groups up to and including each group.
    let mut c1 = Vec::with_capacity(groups.len());
    let mut c2 = Vec::with_capacity(groups.len());
    let (mut a, mut b) = (0.0, 0.0);
    for &(_, d, s) in &groups {
        if d > 0.0 {
            a += d / s;
            b += d / (s * s);
        }
        c1.push(a);
        c2.push(b);
    }
    let mut grad = vec![0.0; eta.len()];
    let mut hess = vec![0.0; eta.len()];
    for i in 0..eta.len() {
        let k = member[i];
        grad[i] = w[i] * c1[k] - events[i] as u8 as f64;
        hess[i] = w[i] * c1[k] - w[i] * w[i] * c2[k];
    }
    (grad, hess)
}

/// Breslow negative log partial likelihood.
pub fn cox_neg_log_partial_likelihood(eta: &[f64], times: &[f64], events: &[bool]) -> f64 {
    nll_with(&RiskSets::new(times), eta, times, events)
}

fn nll_with(rs: &RiskSets, eta: &[f64], times: &[f64], events: &[bool]) -> f64 {
    let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();
    let (groups, member) = rs.groups(times, events, &w);
    let mut nll = 0.0;
    for i in 0..eta.len() {
        if events[i] {
            nll -= eta[i] - shift - groups[member[i]].2.ln();
        }
    }
    nll
}

/// Breslow cumulative baseline hazard `H0(t) = sum_{t_k <= t} d_k / sum_{R_k} exp(eta_j)`.
pub fn breslow_baseline(eta: &[f64], times: &[f64], events: &[bool]) -> StepFunction {
    let rs = RiskSets::new(times);
    let w: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let (groups, _) = rs.groups(times, events, &w);
    let mut out = StepFunction::constant(0.0);
    let mut h = 0.0;
    for (t, d, s) in groups {
        if d > 0.0 {
            h += d / s;
            out.times.push(t);
            out.values.push(h);
        }
    }
    out
}

struct TreeBuilder<'a> {
    binned: &'a BinnedMatrix,
    grad: &'a [f64],
    hess: &'a [f64],
    features: Vec<usize>,
    hp: &'a BoostHyperparams,
    nodes: Vec<Node>,
    leaves: Vec<f64>,
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, g: f64, h: f64) -> u32 {
        self.leaves.push(-g / (h + self.hp.lambda) * self.hp.eta);
        self.nodes.push(Node::Leaf { leaf: (self.leaves.len() - 1) as u32 });
        (self.nodes.len() - 1) as u32
    }

    /// Gradient and Hessian histograms per sampled feature; missing rows in the last slot.
    fn histograms(&self, rows: &[u32]) -> Vec<Hist> {
        self.features
            .iter()
            .map(|&f| {
                let nb = self.binned.n_bins(f);
                let mut hist = Hist { g: vec![0.0; nb + 1], h: vec![0.0; nb + 1] };
                for &i in rows {
                    let b = self.binned.bin(f, i as usize);
                    let b = if b == MISSING_BIN { nb } else { b as usize };
                    hist.g[b] += self.grad[i as usize];
                    hist.h[b] += self.hess[i as usize];
                }
                hist
            })
            .collect()
    }

    fn build(&mut self, rows: Vec<u32>, depth: usize, hist: Option<Vec<Hist>>) -> u32 {
        let (g, h) = rows.iter().fold((0.0, 0.0), |(g, h), &i| (g + self.grad[i as usize], h + self.hess[i as usize]));
        if depth >= self.hp.max_depth || rows.len() < 2 {
            return self.leaf(g, h);
        }
        let hist = hist.unwrap_or_else(|| self.histograms(&rows));
        let Some(split) = self.best_split(&hist, g, h) else {
            return self.leaf(g, h);
        };
        let (left, right): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&i| split.goes_left(self.binned, i as usize));
        // Scan the smaller child and derive its sibling by subtraction.
        let (lh, rh) = if depth + 1 >= self.hp.max_depth {
            (None, None)
        } else if left.len() <= right.len() {
            let small = self.histograms(&left);
            let big = subtract(&hist, &small);
            (Some(small), Some(big))
        } else {
            let small = self.histograms(&right);
            let big = subtract(&hist, &small);
            (Some(big), Some(small))
        };
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { leaf: 0 });
        let l = self.build(left, depth + 1, lh);
        let r = self.build(right, depth + 1, rh);
        self.nodes[idx] = Node::Split {
            feature: split.feature as u16,
            threshold: split.threshold(self.binned),
            missing_left: split.missing_left,
            left: l,
            right: r,
        };
        idx as u32
    }

    fn best_split(&self, hist: &[Hist], g: f64, h: f64) -> Option<BinSplit> {
        let lambda = self.hp.lambda;
        let parent = g * g / (h + lambda);
        let mut best = None;
        for (&f, Hist { g: hg, h: hh }) in self.features.iter().zip(hist) {
            let nb = hg.len() - 1;
            if nb < 2 {
                continue;
            }
            let (mut gl, mut hl) = (0.0, 0.0);
            for b in 0..nb - 1 {
                gl += hg[b];
                hl += hh[b];
                // Missing rows go to whichever side yields the larger gain.
                for miss_left in [false, true] {
                    let (gl2, hl2) = if miss_left { (gl + hg[nb], hl + hh[nb]) } else { (gl, hl) };
                    let (gr, hr) = (g - gl2, h - hl2);
                    if hl2 < self.hp.min_child_weight || hr < self.hp.min_child_weight {
                        continue;
                    }
                    let gain = gl2 * gl2 / (hl2 + lambda) + gr * gr / (hr + lambda) - parent;
                    better(&mut best, BinSplit { feature: f, bin: b, missing_left: miss_left, score: gain });
                }
            }
        }
        best.filter(|s| s.score > 1e-12)
    }
}

struct Hist {
    g: Vec<f64>,
    h: Vec<f64>,
}

fn subtract(parent: &[Hist], child: &[Hist]) -> Vec<Hist> {
    parent
        .iter()
        .zip(child)
        .map(|(p, c)| Hist {
            g: p.g.iter().zip(&c.g).map(|(a, b)| a - b).collect(),
            h: p.h.iter().zip(&c.h).map(|(a, b)| (a - b).max(0.0)).collect(),
        })
        .collect()
}

pub fn fit_booster(train: &Cohort, hp: &BoostHyperparams, seed: u64) -> Result<FittedBooster> {
    fit(train, hp, seed, false).map(|(m, _)| m)
}

/// Fit and also return the training negative log partial likelihood after
/// each round.
pub fn fit_booster_traced(train: &Cohort, hp: &BoostHyperparams, seed: u64) -> Result<(FittedBooster, Vec<f64>)> {
    fit(train, hp, seed, true)
}

fn fit(train: &Cohort, hp: &BoostHyperparams, seed: u64, traced: bool) -> Result<(FittedBooster, Vec<f64>)> {
    hp.validate()?;
    if train.event_count() < 2 {
        return Err(Error::Fit(format!("booster needs at least 2 events, found {}", train.event_count())));
    }
    let encoder = EncoderSpec::fit(train, true);
    let rows = encoder.encode_cohort(train);
    let p = encoder.n_features();
    let binned = BinnedMatrix::new(&rows, p);
    let times = train.times();
    let events = train.events();
    let rs = RiskSets::new(&times);
    let n = times.len();
    let mut eta = vec![0.0; n];
    let mut trees = Vec::with_capacity(hp.nrounds);
    let mut trace = Vec::with_capacity(hp.nrounds);
    let mut rng = rng::seeded(seed);
    let n_cols = ((hp.colsample_bytree * p as f64).round() as usize).clamp(1, p);
    for _ in 0..hp.nrounds {
        let (grad, hess) = grad_hess_with(&rs, &eta, &times, &events);
        let sampled: Vec<u32> = if hp.subsample < 1.0 {
            (0..n as u32).filter(|_| rng.random_bool(hp.subsample)).collect()
        } else {
            (0..n as u32).collect()
        };
        let mut features: Vec<usize> = if n_cols < p { sample(&mut rng, p, n_cols).into_vec() } else { (0..p).collect() };
        features.sort_unstable();
        let mut b = TreeBuilder { binned: &binned, grad: &grad, hess: &hess, features, hp, nodes: Vec::new(), leaves: Vec::new() };
        b.build(sampled, 0, None);
        let tree = Tree { nodes: b.nodes, leaves: b.leaves };
        for (i, row) in rows.iter().enumerate() {
            eta[i] += tree.leaf_for(row);
        }
        if eta.iter().any(|e| !e.is_finite()) {
            return Err(Error::Numeric { param: "leaf weight".into() });
        }
        if traced {
            trace.push(nll_with(&rs, &eta, &times, &events));
        }
        trees.push(tree);
    }
    let baseline_hazard = breslow_baseline(&eta, &times, &events);
    Ok((
        FittedBooster { version: BOOSTER_VERSION, hyperparams: hp.clone(), seed, encoder, trees, baseline_hazard },
        trace,
    ))
}

impl FittedBooster {
    pub fn score(&self, r: &PatientRecord) -> f64 {
        let mut x = vec![0.0; self.encoder.n_features()];
        self.encoder.encode_into(r, &mut x);
        self.trees.iter().map(|t| t.leaf_for(&x)).sum()
    }

    pub fn survival_from_score(&self, eta: f64, t: f64) -> f64 {
        (-self.baseline_hazard.eval(t) * eta.exp()).exp()
    }

    pub fn predict(&self, r: &PatientRecord, t: f64) -> f64 {
        self.survival_from_score(self.score(r), t)
    }

    pub fn predict_cohort(&self, c: &Cohort, t: f64) -> Vec<f64> {
        c.records.iter().map(|r| self.predict(r, t)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: FittedBooster = serde_json::from_str(s)?;
        if b.version != BOOSTER_VERSION {
            return Err(Error::Config(format!("unsupported booster version {}", b.version)));
        }
        Ok(b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn booster_predict(m: &FittedBooster, r: &PatientRecord, t: f64) -> f64 {
    m.predict(r, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_record_hand_values() {
        let (g, h) = cox_grad_hess(&[0.0, 0.0], &[1.0, 2.0], &[true, true]).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
        // d/d eta of w*c1 - w^2 c2: record 1 sees only the first risk set.
        assert!((h[0] - 0.25).abs() < 1e-15);
        assert!((h[1] - (1.5 - 1.25)).abs() < 1e-15);
        let h0 = breslow_baseline(&[0.0, 0.0], &[1.0, 2.0], &[true, true]);
        assert_eq!(h0.eval(2.0), 1.5);
        assert_eq!(h0.eval(0.0), 0.0);
    }

    #[test]
    fn no_events_is_an_error() {
        assert!(cox_grad_hess(&[0.0], &[1.0], &[false]).is_err());
    }

    #[test]
    fn tied_times_share_risk_sets() {
        let (g, _) = cox_grad_hess(&[0.0; 3], &[1.0, 1.0, 2.0], &[true, false, true]).unwrap();
        assert!((g[0] - (1.0 / 3.0 - 1.0)).abs() < 1e-15);
        assert!((g[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((g[2] - (1.0 / 3.0 + 1.0 - 1.0)).abs() < 1e-15);
    }
}
