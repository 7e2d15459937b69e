use serde::{Deserialize, Serialize};

/// Right-continuous step function: `start` before the first breakpoint and
/// `values[k]` on `[times[k], times[k + 1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub start: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFunction {
    pub fn constant(v: f64) -> Self {
        StepFunction { start: v, times: Vec::new(), values: Vec::new() }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 { self.start } else { self.values[k - 1] }
    }

    /// Left limit `F(t-)`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 { self.start } else { self.values[k - 1] }
    }
}

/// Distinct sorted times with (events, censorings, at-risk) counts.
fn risk_table(times: &[f64], events: &[bool]) -> Vec<(f64, usize, usize, usize)> {
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut out = Vec::new();
    let mut at_risk = times.len();
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let (mut d, mut c) = (0, 0);
        let mut j = i;
        while j < order.len() && times[order[j]] == t {
            if events[order[j]] { d += 1 } else { c += 1 }
            j += 1;
        }
        out.push((t, d, c, at_risk));
        at_risk -= j - i;
        i = j;
    }
    out
}

/// Product-limit estimate of the event-free survival function.
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> StepFunction {
    assert_eq!(times.len(), events.len());
    let mut s = 1.0;
    let mut out = StepFunction::constant(1.0);
    for (t, d, _, y) in risk_table(times, events) {
        if d > 0 {
            s *= (y - d) as f64 / y as f64;
            out.times.push(t);
            out.values.push(s);
        }
    }
    out
}

/// Kaplan-Meier estimate of the censoring survival function. At tied times
/// events are taken to occur first, so subjects failing at `t` are not at risk
/// of being censored at `t`.
pub fn kaplan_meier_censoring(times: &[f64], events: &[bool]) -> StepFunction {
    assert_eq!(times.len(), events.len());
    let mut s = 1.0;
    let mut out = StepFunction::constant(1.0);
    for (t, d, c, y) in risk_table(times, events) {
        if c > 0 {
            s *= (y - d - c) as f64 / (y - d) as f64;
            out.times.push(t);
            out.values.push(s);
        }
    }
    out
}
