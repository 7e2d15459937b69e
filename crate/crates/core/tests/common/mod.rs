//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::Rng;

/// Censoring survival `G(s)` by direct counting; events leave the risk set
/// before censorings at tied times. `left` gives `G(s-)`.
pub fn censoring_survival(times: &[f64], events: &[bool], s: f64, left: bool) -> f64 {
    let mut cens: Vec<f64> = times.iter().zip(events).filter(|(_, e)| !**e).map(|(t, _)| *t).collect();
    cens.sort_by(f64::total_cmp);
    cens.dedup();
    let mut g = 1.0;
    for u in cens {
        if (left && u >= s) || (!left && u > s) {
            break;
        }
        let at_risk = times.iter().zip(events).filter(|(t, e)| **t > u || (**t == u && !**e)).count();
        let censored = times.iter().zip(events).filter(|(t, e)| **t == u && !**e).count();
        g *= 1.0 - censored as f64 / at_risk as f64;
    }
    g
}

/// Cumulative/dynamic IPCW AUC by enumerating every weighted case-control pair.
pub fn auc_by_pairs(risks: &[f64], times: &[f64], events: &[bool], t: f64) -> Option<f64> {
    let gt = censoring_survival(times, events, t, false);
    let gt = if gt > 0.0 { gt } else { censoring_survival(times, events, t, true) };
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..risks.len() {
        if !(events[i] && times[i] <= t) {
            continue;
        }
        let wi = 1.0 / censoring_survival(times, events, times[i], true);
        for j in 0..risks.len() {
            let control = times[j] > t || (times[j] == t && !events[j]);
            if !control {
                continue;
            }
            let w = wi / gt;
            den += w;
            if risks[i] > risks[j] {
                num += w;
            } else if risks[i] == risks[j] {
                num += 0.5 * w;
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Breslow negative log partial likelihood written directly from its definition.
pub fn breslow_nll(eta: &[f64], times: &[f64], events: &[bool]) -> f64 {
    let mut nll = 0.0;
    for i in 0..eta.len() {
        if events[i] {
            let risk: f64 = (0..eta.len()).filter(|&j| times[j] >= times[i]).map(|j| eta[j].exp()).sum();
            nll -= eta[i] - risk.ln();
        }
    }
    nll
}

/// A random survival instance with tied times, mixed censoring and tied risks.
pub fn random_instance<R: Rng>(rng: &mut R, n: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let times: Vec<f64> = (0..n).map(|_| 0.5 * rng.random_range(1..=20) as f64).collect();
    let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.45)).collect();
    let risks: Vec<f64> = (0..n).map(|_| rng.random_range(0..30) as f64 / 30.0).collect();
    (risks, times, events)
}
