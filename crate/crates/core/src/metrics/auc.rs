use std::io::Write;

use serde::{Deserialize, Serialize};

use super::km::kaplan_meier_censoring;
use crate::error::{Error, Result};

/// Cases (event by `t`) and controls (known event-free at `t`) with their
/// inverse-probability-of-censoring weights.
///
/// Controls are records with `T > t`, plus records censored exactly at `t`:
/// with follow-up truncated at the horizon these are the only survivors.
/// Every control shares the weight `1 / G(t)`, so the choice of `G(t)` versus
/// `G(t-)` for the common weight cancels in the AUC.
struct WeightedGroups {
    cases: Vec<(f64, f64)>,
    controls: Vec<(f64, f64)>,
}

fn weighted_groups(risks: &[f64], times: &[f64], events: &[bool], t: f64) -> Result<WeightedGroups> {
    if risks.len() != times.len() || times.len() != events.len() {
        return Err(Error::Config("risks, times and events must have equal length".into()));
    }
    let g = kaplan_meier_censoring(times, events);
    let g_t = if g.eval(t) > 0.0 { g.eval(t) } else { g.eval_left(t) };
    let mut cases = Vec::new();
    let mut controls = Vec::new();
    for i in 0..times.len() {
        if times[i] <= t && events[i] {
            cases.push((risks[i], 1.0 / g.eval_left(times[i])));
        } else if times[i] > t || (times[i] == t && !events[i]) {
            controls.push((risks[i], 1.0 / g_t));
        }
    }
    if cases.is_empty() {
        return Err(Error::UndefinedMetric(format!("no cases with an event by t = {t}")));
    }
    if controls.is_empty() {
        return Err(Error::UndefinedMetric(format!("no controls event-free beyond t = {t}")));
    }
    Ok(WeightedGroups { cases, controls })
}

/// Cumulative/dynamic IPCW AUC at horizon `t`; higher risk should mean earlier
/// events. Tied risks count one half.
pub fn ipcw_auc(risks: &[f64], times: &[f64], events: &[bool], t: f64) -> Result<f64> {
    let WeightedGroups { cases, mut controls } = weighted_groups(risks, times, events, t)?;
    controls.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cum = Vec::with_capacity(controls.len() + 1);
    cum.push(0.0);
    for c in &controls {
        cum.push(cum.last().unwrap() + c.1);
    }
    let total_ctrl = *cum.last().unwrap();
    let mut num = 0.0;
    let mut total_case = 0.0;
    for &(r, w) in &cases {
        let below = controls.partition_point(|c| c.0 < r);
        let upto = controls.partition_point(|c| c.0 <= r);
        num += w * (cum[below] + 0.5 * (cum[upto] - cum[below]));
        total_case += w;
    }
    Ok(num / (total_case * total_ctrl))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// IPCW-weighted ROC curve from (0, 0) to (1, 1), one point per distinct risk threshold.
pub fn roc_curve_data(risks: &[f64], times: &[f64], events: &[bool], t: f64) -> Result<Vec<RocPoint>> {
    let WeightedGroups { cases, controls } = weighted_groups(risks, times, events, t)?;
    let w_case: f64 = cases.iter().map(|c| c.1).sum();
    let w_ctrl: f64 = controls.iter().map(|c| c.1).sum();
    let mut all: Vec<(f64, f64, bool)> = cases
        .iter()
        .map(|&(r, w)| (r, w, true))
        .chain(controls.iter().map(|&(r, w)| (r, w, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < all.len() {
        let r = all[i].0;
        while i < all.len() && all[i].0 == r {
            if all[i].2 { tp += all[i].1 } else { fp += all[i].1 }
            i += 1;
        }
        points.push(RocPoint { fpr: fp / w_ctrl, tpr: tp / w_case });
    }
    let last = points.last_mut().unwrap();
    last.fpr = 1.0;
    last.tpr = 1.0;
    Ok(points)
}

pub fn write_roc_csv<W: Write>(points: &[RocPoint], mut w: W) -> Result<()> {
    writeln!(w, "fpr,tpr")?;
    for p in points {
        writeln!(w, "{},{}", p.fpr, p.tpr)?;
    }
    Ok(())
}
