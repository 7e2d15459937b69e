//! Random survival forest with log-rank splitting and Nelson-Aalen leaves.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, PatientRecord};
use crate::error::{Error, Result};
use crate::features::EncoderSpec;
use crate::metrics::StepFunction;
use crate::rng;
use crate::tree::{better, BinSplit, BinnedMatrix, Node, Tree, MISSING_BIN};

pub const FOREST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRule {
    Logrank,
    Logrankscore,
}

impl SplitRule {
    pub fn name(self) -> &'static str {
        match self {
            SplitRule::Logrank => "logrank",
            SplitRule::Logrankscore => "logrankscore",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestHyperparams {
    pub ntree: usize,
    pub mtry: usize,
    pub nodesize: usize,
    pub splitrule: SplitRule,
    /// Feed Bernstein-expanded age and size to the trees.
    #[serde(default = "default_true")]
    pub bernstein: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ForestHyperparams {
    fn default() -> Self {
        ForestHyperparams { ntree: 500, mtry: 4, nodesize: 5, splitrule: SplitRule::Logrank, bernstein: true }
    }
}

impl ForestHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.ntree == 0 || self.mtry == 0 || self.nodesize == 0 {
            return Err(Error::Config("ntree, mtry and nodesize must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedForest {
    pub version: u32,
    pub hyperparams: ForestHyperparams,
    pub seed: u64,
    pub encoder: EncoderSpec,
    /// Leaves hold the Nelson-Aalen cumulative hazard of their in-bag records.
    pub trees: Vec<Tree<StepFunction>>,
    /// In-bag indicator per tree and training row (not serialized).
    #[serde(skip)]
    pub inbag: Vec<Vec<bool>>,
}

/// Absolute standardized two-sample log-rank statistic.
pub fn logrank_split_statistic(left: (&[f64], &[bool]), right: (&[f64], &[bool])) -> f64 {
    let mut all: Vec<(f64, bool, bool)> = Vec::new();
    all.extend(left.0.iter().zip(left.1).map(|(t, e)| (*t, *e, true)));
    all.extend(right.0.iter().zip(right.1).map(|(t, e)| (*t, *e, false)));
    let mut event_times: Vec<f64> = all.iter().filter(|r| r.1).map(|r| r.0).collect();
    event_times.sort_by(|a, b| a.total_cmp(b));
    event_times.dedup();
    let (mut num, mut var) = (0.0, 0.0);
    for &t in &event_times {
        let y = all.iter().filter(|r| r.0 >= t).count() as f64;
        let yl = all.iter().filter(|r| r.0 >= t && r.2).count() as f64;
        let d = all.iter().filter(|r| r.0 == t && r.1).count() as f64;
        let dl = all.iter().filter(|r| r.0 == t && r.1 && r.2).count() as f64;
        let (n, v) = logrank_terms(y, yl, d, dl);
        num += n;
        var += v;
    }
    if var > 0.0 { num.abs() / var.sqrt() } else { 0.0 }
}

#[inline]
fn logrank_terms(y: f64, yl: f64, d: f64, dl: f64) -> (f64, f64) {
    let num = dl - yl * d / y;
    let var = if y > 1.0 { (yl / y) * (1.0 - yl / y) * ((y - d) / (y - 1.0)) * d } else { 0.0 };
    (num, var)
}

/// Training data prepared for tree growing.
struct Prepared {
    binned: BinnedMatrix,
    times: Vec<f64>,
    events: Vec<bool>,
    /// Number of distinct event times `<= time_i`.
    risk_end: Vec<u32>,
    n_event_times: usize,
}

impl Prepared {
    fn new(rows: &[Vec<f64>], n_features: usize, c: &Cohort) -> Self {
        let times = c.times();
        let events = c.events();
        let mut et: Vec<f64> = times.iter().zip(&events).filter(|(_, e)| **e).map(|(t, _)| *t).collect();
        et.sort_by(|a, b| a.total_cmp(b));
        et.dedup();
        let risk_end = times.iter().map(|t| et.partition_point(|s| s <= t) as u32).collect();
        Prepared { binned: BinnedMatrix::new(rows, n_features), times, events, risk_end, n_event_times: et.len() }
    }
}

struct LocalTimes {
    k: usize,
    lr: Vec<(usize, Option<usize>)>,
    y_tot: Vec<f64>,
    d_tot: Vec<f64>,
}

struct Grower<'a> {
    data: &'a Prepared,
    hp: &'a ForestHyperparams,
    nodes: Vec<Node>,
    leaves: Vec<StepFunction>,
}

fn nelson_aalen(rows: &[u32], data: &Prepared) -> StepFunction {
    if !rows.iter().any(|&i| data.events[i as usize]) {
        return StepFunction::constant(0.0);
    }
    let mut obs: Vec<(f64, bool)> = rows.iter().map(|&i| (data.times[i as usize], data.events[i as usize])).collect();
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = StepFunction::constant(0.0);
    let mut at_risk = obs.len();
    let mut h = 0.0;
    let mut i = 0;
    while i < obs.len() {
        let t = obs[i].0;
        let mut j = i;
        let mut d = 0;
        while j < obs.len() && obs[j].0 == t {
            d += obs[j].1 as usize;
            j += 1;
        }
        if d > 0 {
            h += d as f64 / at_risk as f64;
            out.times.push(t);
            out.values.push(h);
        }
        at_risk -= j - i;
        i = j;
    }
    out
}

impl Grower<'_> {
    fn leaf(&mut self, rows: &[u32]) -> u32 {
        self.leaves.push(nelson_aalen(rows, self.data));
        self.nodes.push(Node::Leaf { leaf: (self.leaves.len() - 1) as u32 });
        (self.nodes.len() - 1) as u32
    }

    fn grow(&mut self, rows: Vec<u32>, rng: &mut rng::Rng) -> u32 {
        let n_events = rows.iter().filter(|&&i| self.data.events[i as usize]).count();
        if n_events == 0 || rows.len() < 2 * self.hp.nodesize {
            return self.leaf(&rows);
        }
        let p = self.data.binned.n_features;
        let mut features: Vec<usize> = sample(rng, p, self.hp.mtry.min(p)).into_vec();
        features.sort_unstable();
        let best = match self.hp.splitrule {
            SplitRule::Logrank => self.best_logrank(&rows, &features),
            SplitRule::Logrankscore => self.best_score(&rows, &features),
        };
        let Some(split) = best.filter(|s| s.score > 1e-12) else {
            return self.leaf(&rows);
        };
        let (left, right): (Vec<u32>, Vec<u32>) =
            rows.iter().partition(|&&i| split.goes_left(&self.data.binned, i as usize));
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { leaf: 0 });
        let l = self.grow(left, rng);
        let r = self.grow(right, rng);
        self.nodes[idx] = Node::Split {
            feature: split.feature as u16,
            threshold: split.threshold(&self.data.binned),
            missing_left: split.missing_left,
            left: l,
            right: r,
        };
        idx as u32
    }

    /// For every split with no missing rows, missing values follow the larger child.
    fn missing_default(n_left: usize, n_right: usize) -> bool {
        n_left >= n_right
    }

    /// Node-local event times: per-row `(risk end, event index)` and the
    /// at-risk and event counts at each local event time.
    fn local_times(&self, rows: &[u32]) -> LocalTimes {
        let d = self.data;
        // Node-local event times, as positions in the global event-time index.
        let mut local: Vec<u32> = rows
            .iter()
            .filter(|&&i| d.events[i as usize])
            .map(|&i| d.risk_end[i as usize] - 1)
            .collect();
        local.sort_unstable();
        local.dedup();
        let k = local.len();
        // Global risk end -> local risk end.
        let mut to_local = vec![0usize; d.n_event_times + 1];
        for &g in &local {
            to_local[g as usize + 1] += 1;
        }
        for g in 1..to_local.len() {
            to_local[g] += to_local[g - 1];
        }
        // Per row: local risk end and local event index.
        let lr: Vec<(usize, Option<usize>)> = rows
            .iter()
            .map(|&i| {
                let r = to_local[d.risk_end[i as usize] as usize];
                (r, d.events[i as usize].then(|| r - 1))
            })
            .collect();
        let mut y_tot = vec![0.0; k + 1];
        let mut d_tot = vec![0.0; k];
        for &(r, e) in &lr {
            y_tot[r] += 1.0;
            if let Some(e) = e {
                d_tot[e] += 1.0;
            }
        }
        suffix_sum(&mut y_tot);
        LocalTimes { k, lr, y_tot, d_tot }
    }

    fn best_logrank(&self, rows: &[u32], features: &[usize]) -> Option<BinSplit> {
        let d = self.data;
        let LocalTimes { k, lr, y_tot, d_tot } = self.local_times(rows);
        // Per event time: expected-events factor d/y and variance factor
        // d(y - d) / (y^2 (y - 1)), so the scan needs only multiplications.
        let mut a = vec![0.0; k];
        let mut c = vec![0.0; k];
        for j in 0..k {
            let (y, dj) = (y_tot[j], d_tot[j]);
            a[j] = dj / y;
            c[j] = if y > 1.0 { dj * (y - dj) / (y * y * (y - 1.0)) } else { 0.0 };
        }
        let mut best = None;
        let nodesize = self.hp.nodesize;
        let n = rows.len();
        for &f in features {
            let nb = d.binned.n_bins(f);
            if nb < 2 {
                continue;
            }
            // Histograms, missing rows in slot `nb`.
            let mut cnt = vec![0.0; (nb + 1) * (k + 1)];
            let mut dth = vec![0.0; (nb + 1) * k];
            let mut rows_in = vec![0usize; nb + 1];
            for (pos, &i) in rows.iter().enumerate() {
                let b = d.binned.bin(f, i as usize);
                let b = if b == MISSING_BIN { nb } else { b as usize };
                let (r, e) = lr[pos];
                cnt[b * (k + 1) + r] += 1.0;
                if let Some(e) = e {
                    dth[b * k + e] += 1.0;
                }
                rows_in[b] += 1;
            }
            let n_miss = rows_in[nb];
            let mut miss_y = cnt[nb * (k + 1)..].to_vec();
            suffix_sum(&mut miss_y);
            let miss_d = &dth[nb * k..];
            let miss_dsum: f64 = miss_d.iter().sum();
            let mut cum_cnt = vec![0.0; k + 1];
            let mut d_left = 0.0;
            let mut n_left = 0usize;
            let mut yl = vec![0.0; k + 1];
            for b in 0..nb - 1 {
                if rows_in[b] == 0 {
                    // Same partition as the previous threshold.
                    continue;
                }
                for j in 0..=k {
                    cum_cnt[j] += cnt[b * (k + 1) + j];
                }
                d_left += dth[b * k..(b + 1) * k].iter().sum::<f64>();
                n_left += rows_in[b];
                let fits = |nl: usize| nl >= nodesize && n - nl >= nodesize;
                let try_plain = fits(n_left);
                let try_miss = n_miss > 0 && fits(n_left + n_miss);
                if !try_plain && !try_miss {
                    continue;
                }
                yl.copy_from_slice(&cum_cnt);
                suffix_sum(&mut yl);
                for miss_left in [false, true] {
                    if !(if miss_left { try_miss } else { try_plain }) {
                        continue;
                    }
                    let nl = n_left + if miss_left { n_miss } else { 0 };
                    let mut num = d_left + if miss_left { miss_dsum } else { 0.0 };
                    let mut var = 0.0;
                    for j in 0..k {
                        let y_l = if miss_left { yl[j] + miss_y[j] } else { yl[j] };
                        num -= y_l * a[j];
                        var += y_l * (y_tot[j] - y_l) * c[j];
                    }
                    let score = if var > 0.0 { num.abs() / var.sqrt() } else { 0.0 };
                    let missing_left = if n_miss > 0 { miss_left } else { Self::missing_default(nl, n - nl) };
                    better(&mut best, BinSplit { feature: f, bin: b, missing_left, score });
                }
            }
        }
        best
    }

    /// Log-rank score test: each row scores `delta_i - Lambda(T_i)` under the
    /// node's Nelson-Aalen estimate, and the split statistic is the
    /// standardized sum of scores on the left.
    fn best_score(&self, rows: &[u32], features: &[usize]) -> Option<BinSplit> {
        let d = self.data;
        let LocalTimes { k, lr, y_tot, d_tot } = self.local_times(rows);
        // Node Nelson-Aalen hazard at each row's time.
        let mut cum = vec![0.0; k + 1];
        for j in 0..k {
            cum[j + 1] = cum[j] + d_tot[j] / y_tot[j];
        }
        let scores: Vec<f64> = lr.iter().map(|&(r, e)| e.is_some() as u8 as f64 - cum[r]).collect();
        let n = rows.len();
        let nf = n as f64;
        let mean = scores.iter().sum::<f64>() / nf;
        let ss: f64 = scores.iter().map(|a| (a - mean) * (a - mean)).sum();
        if ss <= 0.0 {
            return None;
        }
        let mut best = None;
        let nodesize = self.hp.nodesize;
        for &f in features {
            let nb = d.binned.n_bins(f);
            if nb < 2 {
                continue;
            }
            let mut sum = vec![0.0; nb + 1];
            let mut cnt = vec![0usize; nb + 1];
            for (pos, &i) in rows.iter().enumerate() {
                let b = d.binned.bin(f, i as usize);
                let b = if b == MISSING_BIN { nb } else { b as usize };
                sum[b] += scores[pos];
                cnt[b] += 1;
            }
            let (mut s_left, mut n_left) = (0.0, 0usize);
            for b in 0..nb - 1 {
                s_left += sum[b];
                n_left += cnt[b];
                let options: &[bool] = if cnt[nb] > 0 { &[false, true] } else { &[false] };
                for &miss_left in options {
                    let (s, nl) = if miss_left { (s_left + sum[nb], n_left + cnt[nb]) } else { (s_left, n_left) };
                    if nl < nodesize || n - nl < nodesize {
                        continue;
                    }
                    let nlf = nl as f64;
                    let var = nlf * (nf - nlf) / (nf * (nf - 1.0)) * ss;
                    let score = if var > 0.0 { (s - nlf * mean).abs() / var.sqrt() } else { 0.0 };
                    let missing_left = if cnt[nb] > 0 { miss_left } else { Self::missing_default(nl, n - nl) };
                    better(&mut best, BinSplit { feature: f, bin: b, missing_left, score });
                }
            }
        }
        best
    }
}

fn suffix_sum(v: &mut [f64]) {
    // v[j] becomes the sum over indices > j (at-risk counts at event time j).
    let mut acc = 0.0;
    for j in (0..v.len()).rev() {
        let here = v[j];
        v[j] = acc;
        acc += here;
    }
}

fn fit_tree(data: &Prepared, hp: &ForestHyperparams, seed: u64, tree_idx: usize) -> (Tree<StepFunction>, Vec<bool>) {
    let mut rng = rng::stream(seed, tree_idx as u64);
    let n = data.times.len();
    let rows: Vec<u32> = (0..n).map(|_| rng.random_range(0..n) as u32).collect();
    let mut inbag = vec![false; n];
    for &i in &rows {
        inbag[i as usize] = true;
    }
    let mut g = Grower { data, hp, nodes: Vec::new(), leaves: Vec::new() };
    g.grow(rows, &mut rng);
    (Tree { nodes: g.nodes, leaves: g.leaves }, inbag)
}

pub fn fit_forest(train: &Cohort, hp: &ForestHyperparams, seed: u64) -> Result<FittedForest> {
    hp.validate()?;
    if train.event_count() < 2 {
        return Err(Error::Fit(format!("forest needs at least 2 events, found {}", train.event_count())));
    }
    let encoder = EncoderSpec::fit(train, hp.bernstein);
    let rows = encoder.encode_cohort(train);
    let data = Prepared::new(&rows, encoder.n_features(), train);
    let fitted: Vec<(Tree<StepFunction>, Vec<bool>)> =
        (0..hp.ntree).into_par_iter().map(|k| fit_tree(&data, hp, seed, k)).collect();
    let (trees, inbag) = fitted.into_iter().unzip();
    Ok(FittedForest { version: FOREST_VERSION, hyperparams: hp.clone(), seed, encoder, trees, inbag })
}

impl FittedForest {
    fn encode(&self, r: &PatientRecord) -> Vec<f64> {
        let mut x = vec![0.0; self.encoder.n_features()];
        self.encoder.encode_into(r, &mut x);
        x
    }

    /// Mean cumulative hazard at `t` over the first `ntree` trees.
    fn mean_chf(&self, x: &[f64], t: f64, ntree: usize) -> f64 {
        self.trees[..ntree].iter().map(|tr| tr.leaf_for(x).eval(t)).sum::<f64>() / ntree as f64
    }

    /// Every leaf's cumulative hazard at `t`, per tree.
    fn leaf_tables(&self, t: f64, ntree: usize) -> Vec<Vec<f64>> {
        self.trees[..ntree].par_iter().map(|tr| tr.leaves.iter().map(|l| l.eval(t)).collect()).collect()
    }

    pub fn predict(&self, r: &PatientRecord, t: f64) -> f64 {
        (-self.mean_chf(&self.encode(r), t, self.trees.len())).exp()
    }

    pub fn predict_cohort(&self, c: &Cohort, t: f64) -> Vec<f64> {
        let n = self.trees.len();
        self.predict_cohort_prefixes(c, t, &[n]).expect("full forest is a valid prefix").remove(0)
    }

    /// Predictions using only the first `k` trees, for each `k` in `sizes`.
    /// Trees are grown from independent per-index streams, so a prefix is the
    /// forest that would have been fitted with `ntree = k`.
    pub fn predict_cohort_prefixes(&self, c: &Cohort, t: f64, sizes: &[usize]) -> Result<Vec<Vec<f64>>> {
        if sizes.iter().any(|&k| k == 0 || k > self.trees.len()) {
            return Err(Error::Config(format!("prefix sizes must lie in 1..={}", self.trees.len())));
        }
        let max = sizes.iter().copied().max().unwrap_or(0);
        let tables = self.leaf_tables(t, max);
        let mut order: Vec<usize> = (0..sizes.len()).collect();
        order.sort_by_key(|&i| sizes[i]);
        let xs: Vec<Vec<f64>> = c.records.iter().map(|r| self.encode(r)).collect();
        // Tree-major within a chunk of records keeps each tree in cache; every
        // record still sums its trees in index order.
        let per_record: Vec<Vec<f64>> = xs
            .par_chunks(256)
            .flat_map_iter(|chunk| {
                let mut acc = vec![0.0; chunk.len()];
                let mut res = vec![vec![0.0; sizes.len()]; chunk.len()];
                let mut done = 0;
                for &i in &order {
                    for (tr, tab) in self.trees[done..sizes[i]].iter().zip(&tables[done..sizes[i]]) {
                        for (a, x) in acc.iter_mut().zip(chunk) {
                            *a += tab[tr.leaf_index(x)];
                        }
                    }
                    done = sizes[i];
                    for (r, a) in res.iter_mut().zip(&acc) {
                        r[i] = (-a / sizes[i] as f64).exp();
                    }
                }
                res
            })
            .collect();
        Ok((0..sizes.len()).map(|s| per_record.iter().map(|p| p[s]).collect()).collect())
    }

    /// Out-of-bag survival at `t` for the training cohort; `None` when a record
    /// was in-bag for every tree.
    pub fn oob_predict(&self, train: &Cohort, t: f64) -> Result<Vec<Option<f64>>> {
        if self.inbag.len() != self.trees.len() || self.inbag.first().is_some_and(|b| b.len() != train.len()) {
            return Err(Error::Config("out-of-bag prediction needs the training cohort of a freshly fitted forest".into()));
        }
        Ok(train
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let x = self.encode(r);
                let (mut h, mut k) = (0.0, 0usize);
                for (tr, bag) in self.trees.iter().zip(&self.inbag) {
                    if !bag[i] {
                        h += tr.leaf_for(&x).eval(t);
                        k += 1;
                    }
                }
                (k > 0).then(|| (-h / k as f64).exp())
            })
            .collect())
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.encoder.feature_names()
    }

    /// Number of trees whose root splits on each feature.
    pub fn root_split_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.encoder.n_features()];
        for t in &self.trees {
            if let Some(f) = t.root_feature() {
                counts[f] += 1;
            }
        }
        counts
    }

    /// Whether any split in the forest uses feature `f`.
    pub fn uses_feature(&self, f: usize) -> bool {
        self.trees.iter().any(|t| t.split_features().any(|g| g == f))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: FittedForest = serde_json::from_str(s)?;
        if f.version != FOREST_VERSION {
            return Err(Error::Config(format!("unsupported forest version {}", f.version)));
        }
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn forest_predict(f: &FittedForest, r: &PatientRecord, t: f64) -> f64 {
    f.predict(r, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_logrank_value() {
        let s = logrank_split_statistic((&[1.0; 5], &[true; 5]), (&[5.0; 5], &[false; 5]));
        assert!((s - 3.0).abs() < 1e-12, "{s}");
        let swapped = logrank_split_statistic((&[5.0; 5], &[false; 5]), (&[1.0; 5], &[true; 5]));
        assert!((s - swapped).abs() < 1e-12);
    }

    #[test]
    fn identical_sides_give_zero() {
        let t = [1.0, 2.0, 3.0];
        let e = [true, false, true];
        assert!(logrank_split_statistic((&t, &e), (&t, &e)).abs() < 1e-12);
    }

    #[test]
    fn no_events_gives_zero() {
        assert_eq!(logrank_split_statistic((&[1.0], &[false]), (&[2.0], &[false])), 0.0);
    }

    #[test]
    fn nelson_aalen_leaf() {
        let data = Prepared {
            binned: BinnedMatrix::new(&vec![vec![0.0]; 4], 1),
            times: vec![1.0, 2.0, 3.0, 4.0],
            events: vec![true, false, false, false],
            risk_end: vec![1, 1, 1, 1],
            n_event_times: 1,
        };
        let na = nelson_aalen(&[0, 1, 2, 3], &data);
        assert_eq!(na.eval(5.0), 0.25);
        assert_eq!(na.eval(0.0), 0.0);
    }
}
