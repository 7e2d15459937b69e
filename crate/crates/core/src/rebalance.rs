//! ROSE-style smoothed bootstrap toward a target outcome balance.
//!
//! Each synthetic record copies a seed record drawn from a class chosen by
//! the target proportion; present numeric covariates are jittered with a
//! Gaussian kernel whose bandwidth is computed within the class. Categorical
//! values, missingness and outcomes are copied unchanged.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, PatientRecord};
use crate::error::{Error, Result};
use crate::rng;
use crate::stats::sd;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoseConfig {
    /// Target fraction of event records.
    pub target: f64,
    /// Output size; defaults to the input size.
    pub size: Option<usize>,
    /// Kernel shrink multiplier.
    pub multiplier: f64,
    pub seed: u64,
}

impl Default for RoseConfig {
    fn default() -> Self {
        RoseConfig { target: 0.5, size: None, multiplier: 1.0, seed: 0 }
    }
}

/// Number of numeric covariates jittered (age, size, node count).
const NUMERIC_DIM: f64 = 3.0;

struct ClassBandwidth {
    age: f64,
    size: f64,
    nodes: f64,
}

fn bandwidths(class: &[&PatientRecord], multiplier: f64) -> ClassBandwidth {
    let factor = multiplier * (4.0 / ((NUMERIC_DIM + 2.0) * class.len() as f64)).powf(1.0 / (NUMERIC_DIM + 4.0));
    let age: Vec<f64> = class.iter().map(|r| r.age).collect();
    let size: Vec<f64> = class.iter().filter_map(|r| r.size_mm).collect();
    let nodes: Vec<f64> = class.iter().filter_map(|r| r.node_count.map(f64::from)).collect();
    ClassBandwidth { age: factor * sd(&age), size: factor * sd(&size), nodes: factor * sd(&nodes) }
}

pub fn rose_resample(c: &Cohort, cfg: &RoseConfig) -> Result<Cohort> {
    if !(cfg.target > 0.0 && cfg.target < 1.0) {
        return Err(Error::Config(format!("ROSE target proportion must lie in (0, 1), got {}", cfg.target)));
    }
    if !(cfg.multiplier >= 0.0) {
        return Err(Error::Config("ROSE multiplier must be >= 0".into()));
    }
    let events: Vec<&PatientRecord> = c.records.iter().filter(|r| r.event).collect();
    let censored: Vec<&PatientRecord> = c.records.iter().filter(|r| !r.event).collect();
    if events.is_empty() || censored.is_empty() {
        return Err(Error::Domain("ROSE needs both outcome classes".into()));
    }
    let bw = [bandwidths(&censored, cfg.multiplier), bandwidths(&events, cfg.multiplier)];
    let classes = [censored, events];
    let size = cfg.size.unwrap_or(c.len());
    let mut rng = rng::seeded(cfg.seed);
    let mut out = Vec::with_capacity(size);
    for _ in 0..size {
        let k = rng.random_bool(cfg.target) as usize;
        let class = &classes[k];
        let seed = class[rng.random_range(0..class.len())];
        let h = &bw[k];
        let mut r = seed.clone();
        let mut noise = |scale: f64| -> f64 {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        };
        if h.age > 0.0 {
            r.age = (r.age + noise(h.age)).max(1e-3);
        }
        if let Some(s) = r.size_mm.filter(|_| h.size > 0.0) {
            r.size_mm = Some((s + noise(h.size)).max(1e-3));
        }
        if let Some(n) = r.node_count.filter(|_| h.nodes > 0.0) {
            r.node_count = Some((n as f64 + noise(h.nodes)).round().max(0.0) as u32);
        }
        out.push(r);
    }
    Cohort::new(out, c.horizon, format!("{} + rose", c.provenance))
}
