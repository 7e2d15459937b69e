use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::stats::quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub defined: usize,
    pub undefined: usize,
}

/// Percentile bootstrap interval (2.5% and 97.5%) of a metric over `n`
/// observations. `metric` receives the resampled indices; resamples where it
/// is undefined are skipped and counted.
pub fn bootstrap_ci<F>(n: usize, metric: F, resamples: usize, seed: u64) -> Result<BootstrapCi>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if n == 0 || resamples == 0 {
        return Err(Error::Config("bootstrap needs observations and at least one resample".into()));
    }
    let all: Vec<usize> = (0..n).collect();
    let estimate = metric(&all)?;
    let values: Vec<Option<f64>> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::stream(seed, b as u64);
            let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            metric(&idx).ok().filter(|v| v.is_finite())
        })
        .collect();
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    let undefined = resamples - defined.len();
    if undefined * 2 > resamples {
        return Err(Error::UndefinedMetric(format!("{undefined} of {resamples} bootstrap resamples undefined")));
    }
    Ok(BootstrapCi {
        estimate,
        lo: quantile(&defined, 0.025),
        hi: quantile(&defined, 0.975),
        defined: defined.len(),
        undefined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_metric() {
        let ci = bootstrap_ci(30, |_| Ok(0.7), 200, 1).unwrap();
        assert_eq!((ci.lo, ci.hi), (0.7, 0.7));
    }

    #[test]
    fn deterministic_under_seed() {
        let data: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let m = |idx: &[usize]| Ok(idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64);
        assert_eq!(bootstrap_ci(50, m, 300, 5).unwrap(), bootstrap_ci(50, m, 300, 5).unwrap());
    }

    #[test]
    fn too_many_undefined_resamples() {
        let full: Vec<usize> = (0..10).collect();
        let m = |idx: &[usize]| if idx == full.as_slice() { Ok(1.0) } else { Err(Error::UndefinedMetric("x".into())) };
        assert!(matches!(bootstrap_ci(10, m, 100, 1), Err(Error::UndefinedMetric(_))));
    }
}
