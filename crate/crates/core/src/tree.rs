//! Shared pieces of the histogram-based tree learners: feature binning and a
//! flat node layout with per-split missing-value directions.

use serde::{Deserialize, Serialize};

pub(crate) const MAX_BINS: usize = 32;
pub(crate) const MISSING_BIN: u8 = u8::MAX;

/// Feature-major binned design. Bin `k` of feature `f` holds values
/// `<= cuts[f][k]` (and above the previous cut); the last bin holds values
/// above every cut.
pub(crate) struct BinnedMatrix {
    pub n_rows: usize,
    pub n_features: usize,
    pub bins: Vec<u8>,
    pub cuts: Vec<Vec<f64>>,
}

fn cut_points(values: &mut Vec<f64>) -> Vec<f64> {
    values.sort_by(|a, b| a.total_cmp(b));
    values.dedup();
    if values.len() <= MAX_BINS {
        return values.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    let mut cuts: Vec<f64> = (1..MAX_BINS)
        .map(|j| values[(j * values.len()) / MAX_BINS - 1])
        .collect();
    cuts.dedup();
    cuts
}

impl BinnedMatrix {
    /// Bin a row-major matrix; NaN entries are missing.
    pub fn new(rows: &[Vec<f64>], n_features: usize) -> Self {
        let n_rows = rows.len();
        let mut bins = vec![MISSING_BIN; n_rows * n_features];
        let mut cuts = Vec::with_capacity(n_features);
        for f in 0..n_features {
            let mut present: Vec<f64> = rows.iter().map(|r| r[f]).filter(|v| !v.is_nan()).collect();
            let c = cut_points(&mut present);
            for (i, r) in rows.iter().enumerate() {
                let v = r[f];
                if !v.is_nan() {
                    bins[f * n_rows + i] = c.partition_point(|&cut| cut < v) as u8;
                }
            }
            cuts.push(c);
        }
        BinnedMatrix { n_rows, n_features, bins, cuts }
    }

    #[inline]
    pub fn bin(&self, feature: usize, row: usize) -> u8 {
        self.bins[feature * self.n_rows + row]
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.cuts[feature].len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split { feature: u16, threshold: f64, missing_left: bool, left: u32, right: u32 },
    Leaf { leaf: u32 },
}

/// A tree whose leaves index into `leaves`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<L> {
    pub nodes: Vec<Node>,
    pub leaves: Vec<L>,
}

impl<L> Tree<L> {
    /// Route an encoded row (NaN = missing) to its leaf.
    pub fn leaf_for(&self, x: &[f64]) -> &L {
        &self.leaves[self.leaf_index(x)]
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut k = 0usize;
        loop {
            match self.nodes[k] {
                Node::Leaf { leaf } => return leaf as usize,
                Node::Split { feature, threshold, missing_left, left, right } => {
                    let v = x[feature as usize];
                    let go_left = if v.is_nan() { missing_left } else { v <= threshold };
                    k = if go_left { left } else { right } as usize;
                }
            }
        }
    }

    /// Features used at depth 0 and below, in node order.
    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature as usize),
            Node::Leaf { .. } => None,
        })
    }

    pub fn root_feature(&self) -> Option<usize> {
        match self.nodes.first() {
            Some(Node::Split { feature, .. }) => Some(*feature as usize),
            _ => None,
        }
    }
}

/// Recorded split candidate in bin space.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BinSplit {
    pub feature: usize,
    /// Rows with bin `<= bin` go left.
    pub bin: usize,
    pub missing_left: bool,
    pub score: f64,
}

impl BinSplit {
    pub fn threshold(&self, m: &BinnedMatrix) -> f64 {
        m.cuts[self.feature][self.bin]
    }

    #[inline]
    pub fn goes_left(&self, m: &BinnedMatrix, row: usize) -> bool {
        let b = m.bin(self.feature, row);
        if b == MISSING_BIN { self.missing_left } else { b as usize <= self.bin }
    }
}

/// Keep the better of two candidates; on equal scores the incumbent wins, so
/// scanning features and thresholds in ascending order breaks ties toward the
/// lowest index.
pub(crate) fn better(best: &mut Option<BinSplit>, cand: BinSplit) {
    if best.is_none_or(|b| cand.score > b.score) {
        *best = Some(cand);
    }
}
