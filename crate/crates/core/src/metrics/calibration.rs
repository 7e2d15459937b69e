//! Smoothed calibration for survival predictions and the integrated
//! calibration index (ICI).
//!
//! Observed survival is estimated by a proportional-hazards regression of the
//! outcomes on a restricted cubic spline of `ln(-ln(p))`, `p` being the
//! predicted survival; the ICI is the mean absolute gap between predicted and
//! model-implied survival at the horizon.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::km::kaplan_meier;
use crate::error::{Error, Result};
use crate::stats::{mean, quantile_sorted, sd};

/// Predictions are clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]` before the
/// complementary log-log transform.
pub const CLAMP_EPS: f64 = 1e-6;

const KNOT_QUANTILES: [f64; 5] = [0.05, 0.275, 0.5, 0.725, 0.95];
const MIN_RECORDS: usize = 50;
const MIN_EVENTS: usize = 5;

fn cll(p: f64) -> f64 {
    let p = p.clamp(CLAMP_EPS, 1.0 - CLAMP_EPS);
    (-p.ln()).ln()
}

/// Restricted cubic spline basis (Harrell's parameterization): the linear
/// term followed by `k - 2` nonlinear terms scaled by `(k_last - k_first)^2`.
pub fn rcs_basis(x: f64, knots: &[f64]) -> Vec<f64> {
    let k = knots.len();
    let mut out = vec![x];
    if k < 3 {
        return out;
    }
    let pos3 = |v: f64| if v > 0.0 { v * v * v } else { 0.0 };
    let (kl, kp) = (knots[k - 1], knots[k - 2]);
    let norm = (kl - knots[0]).powi(2);
    for kj in &knots[..k - 2] {
        let v = pos3(x - kj) - pos3(x - kp) * (kl - kj) / (kl - kp) + pos3(x - kl) * (kp - kj) / (kl - kp);
        out.push(v / norm);
    }
    out
}

struct CoxFit {
    /// Linear predictor per record (centered covariates).
    eta: Vec<f64>,
    /// Breslow cumulative baseline hazard at the horizon.
    h0_t: f64,
}

/// Newton-Raphson fit of a Breslow proportional-hazards model.
fn cox_fit(z: &[Vec<f64>], times: &[f64], events: &[bool], t: f64) -> Option<CoxFit> {
    let n = z.len();
    let q = z[0].len();
    let means: Vec<f64> = (0..q).map(|j| z.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let zc: Vec<Vec<f64>> = z.iter().map(|r| r.iter().zip(&means).map(|(a, m)| a - m).collect()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    // Covariates flattened in descending-time order.
    let zs: Vec<f64> = order.iter().flat_map(|&r| zc[r].iter().copied()).collect();
    let ts: Vec<f64> = order.iter().map(|&r| times[r]).collect();
    let es: Vec<bool> = order.iter().map(|&r| events[r]).collect();

    // Log-likelihood, score and information at beta.
    let evaluate = |beta: &[f64]| -> (f64, DVector<f64>, DMatrix<f64>) {
        let eta: Vec<f64> = zs.chunks_exact(q).map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
        let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; q];
        let mut s2 = vec![0.0; q * q];
        let mut ll = 0.0;
        let mut grad = DVector::zeros(q);
        let mut info = DMatrix::zeros(q, q);
        let mut zbar = vec![0.0; q];
        let mut i = 0;
        while i < n {
            let ti = ts[i];
            let mut j = i;
            while j < n && ts[j] == ti {
                let w = (eta[j] - shift).exp();
                let zr = &zs[j * q..(j + 1) * q];
                s0 += w;
                for a in 0..q {
                    s1[a] += w * zr[a];
                    for b in 0..q {
                        s2[a * q + b] += w * zr[a] * zr[b];
                    }
                }
                j += 1;
            }
            let d = es[i..j].iter().filter(|e| **e).count();
            if d > 0 {
                let df = d as f64;
                for a in 0..q {
                    zbar[a] = s1[a] / s0;
                }
                ll -= df * s0.ln();
                for r in i..j {
                    if es[r] {
                        ll += eta[r] - shift;
                        for a in 0..q {
                            grad[a] += zs[r * q + a];
                        }
                    }
                }
                for a in 0..q {
                    grad[a] -= df * zbar[a];
                    for b in 0..q {
                        info[(a, b)] += df * (s2[a * q + b] / s0 - zbar[a] * zbar[b]);
                    }
                }
            }
            i = j;
        }
        (ll, grad, info)
    };

    let mut beta = vec![0.0; q];
    let (mut ll, mut grad, mut info) = evaluate(&beta);
    for _ in 0..50 {
        let step = info.clone().cholesky()?.solve(&grad);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let (ll2, g2, i2) = evaluate(&trial);
            if ll2.is_finite() && ll2 >= ll - 1e-12 {
                let done = (ll2 - ll).abs() < 1e-10 * (1.0 + ll.abs());
                beta = trial;
                ll = ll2;
                grad = g2;
                info = i2;
                accepted = true;
                if done {
                    return finish(&zc, &beta, times, events, t);
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if beta.iter().all(|b| b.is_finite()) {
        finish(&zc, &beta, times, events, t)
    } else {
        None
    }
}

fn finish(zc: &[Vec<f64>], beta: &[f64], times: &[f64], events: &[bool], t: f64) -> Option<CoxFit> {
    let eta: Vec<f64> = zc.iter().map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
    let n = eta.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    // Walk backwards in time accumulating the risk-set sums, then add the
    // Breslow increments of event times up to the horizon.
    let mut s0 = 0.0;
    let mut h0 = 0.0;
    let mut i = 0;
    while i < n {
        let ti = times[order[i]];
        let mut j = i;
        let mut d = 0usize;
        while j < n && times[order[j]] == ti {
            s0 += eta[order[j]].exp();
            if events[order[j]] {
                d += 1;
            }
            j += 1;
        }
        if d > 0 && ti <= t {
            h0 += d as f64 / s0;
        }
        i = j;
    }
    if !h0.is_finite() || eta.iter().any(|e| !e.is_finite()) {
        return None;
    }
    Some(CoxFit { eta, h0_t: h0 })
}

/// Smoothed observed survival at `t` for each record.
///
/// Falls back to fewer spline terms, then to the Kaplan-Meier estimate at `t`
/// (intercept-only model), when the spline design is degenerate.
pub fn smoothed_observed(preds: &[f64], times: &[f64], events: &[bool], t: f64) -> Result<Vec<f64>> {
    let n = preds.len();
    if times.len() != n || events.len() != n {
        return Err(Error::Config("preds, times and events must have equal length".into()));
    }
    if n < MIN_RECORDS {
        return Err(Error::UndefinedMetric(format!("calibration needs at least {MIN_RECORDS} records, got {n}")));
    }
    let n_events = events.iter().filter(|e| **e).count();
    if n_events < MIN_EVENTS {
        return Err(Error::UndefinedMetric(format!("calibration needs at least {MIN_EVENTS} events, got {n_events}")));
    }
    if preds.iter().any(|p| !p.is_finite()) {
        return Err(Error::Domain("predictions must be finite".into()));
    }
    let x: Vec<f64> = preds.iter().map(|&p| cll(p)).collect();
    let km_fallback = || vec![kaplan_meier(times, events).eval(t); n];
    if sd(&x) == 0.0 {
        return Ok(km_fallback());
    }
    let mut sorted = x.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut knots: Vec<f64> = KNOT_QUANTILES.iter().map(|&q| quantile_sorted(&sorted, q)).collect();
    knots.dedup();

    let mut n_knots = knots.len();
    loop {
        let used: Vec<f64> = if n_knots >= 3 { knots[..n_knots].to_vec() } else { Vec::new() };
        // Keep the outer knots when fewer terms are used.
        let used = if n_knots >= 3 && n_knots < knots.len() {
            let mut k: Vec<f64> = Vec::with_capacity(n_knots);
            for i in 0..n_knots {
                let pos = i as f64 * (knots.len() - 1) as f64 / (n_knots - 1) as f64;
                k.push(knots[pos.round() as usize]);
            }
            k
        } else {
            used
        };
        let z: Vec<Vec<f64>> = x.iter().map(|&v| rcs_basis(v, &used)).collect();
        if let Some(fit) = cox_fit(&z, times, events, t) {
            return Ok(fit.eta.iter().map(|e| (-fit.h0_t * e.exp()).exp()).collect());
        }
        if n_knots < 3 {
            return Ok(km_fallback());
        }
        n_knots = if n_knots > 3 { n_knots - 1 } else { 0 };
    }
}

/// Mean absolute difference between predictions and observed probabilities.
pub fn ici_from_observed(preds: &[f64], observed: &[f64]) -> f64 {
    mean(&preds.iter().zip(observed).map(|(p, o)| (p - o).abs()).collect::<Vec<_>>())
}

pub fn ici(preds: &[f64], times: &[f64], events: &[bool], t: f64) -> Result<f64> {
    let observed = smoothed_observed(preds, times, events, t)?;
    Ok(ici_from_observed(preds, &observed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileSummary {
    pub quartile: usize,
    pub mean_pred: f64,
    pub mean_obs: f64,
    pub sd_pred: f64,
    pub sd_obs: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    /// `(predicted, smoothed observed)` for every record.
    pub points: Vec<(f64, f64)>,
    pub ici: f64,
    pub quartiles: Vec<QuartileSummary>,
}

/// Calibration plot data: records outside the 10th-90th percentile of the
/// predictions are dropped and the rest split into four quartile groups.
pub fn calibration_plot_data(preds: &[f64], times: &[f64], events: &[bool], t: f64) -> Result<CalibrationCurve> {
    if preds.is_empty() {
        return Err(Error::UndefinedMetric("no predictions to summarize".into()));
    }
    let observed = smoothed_observed(preds, times, events, t)?;
    let mut sorted = preds.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let (lo, hi) = (quantile_sorted(&sorted, 0.1), quantile_sorted(&sorted, 0.9));
    let mut kept: Vec<(f64, f64)> =
        preds.iter().zip(&observed).filter(|(p, _)| **p >= lo && **p <= hi).map(|(p, o)| (*p, *o)).collect();
    kept.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = kept.len();
    let quartiles = (0..4)
        .map(|k| {
            let chunk = &kept[k * m / 4..(k + 1) * m / 4];
            let p: Vec<f64> = chunk.iter().map(|c| c.0).collect();
            let o: Vec<f64> = chunk.iter().map(|c| c.1).collect();
            QuartileSummary { quartile: k + 1, mean_pred: mean(&p), mean_obs: mean(&o), sd_pred: sd(&p), sd_obs: sd(&o), count: chunk.len() }
        })
        .collect();
    Ok(CalibrationCurve {
        ici: ici_from_observed(preds, &observed),
        points: preds.iter().cloned().zip(observed).collect(),
        quartiles,
    })
}

pub fn write_calibration_csv<W: Write>(curve: &CalibrationCurve, mut w: W) -> Result<()> {
    writeln!(w, "quartile,mean_pred,mean_obs,sd_pred,sd_obs")?;
    for q in &curve.quartiles {
        writeln!(w, "{},{},{},{},{}", q.quartile, q.mean_pred, q.mean_obs, q.sd_pred, q.sd_obs)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
        // Deterministic cohort: risk rises with index.
        let mut preds = Vec::new();
        let mut times = Vec::new();
        let mut events = Vec::new();
        for i in 0..n {
            let p = 0.95 - 0.3 * i as f64 / n as f64;
            preds.push(p);
            let event = (i * 7919) % 100 < ((1.0 - p) * 100.0) as usize;
            times.push(if event { 0.5 + (i % 40) as f64 / 10.0 } else { 5.0 + (i % 3) as f64 });
            events.push(event);
        }
        (preds, times, events)
    }

    #[test]
    fn rcs_basis_is_linear_beyond_last_knot() {
        let knots = [0.0, 1.0, 2.0, 3.0, 4.0];
        let f = |x: f64| rcs_basis(x, &knots);
        for j in 1..4 {
            let d1 = f(6.0)[j] - f(5.0)[j];
            let d2 = f(7.0)[j] - f(6.0)[j];
            assert!((d1 - d2).abs() < 1e-9);
            assert_eq!(f(-1.0)[j], 0.0);
        }
    }

    #[test]
    fn constant_predictions_fall_back_to_km() {
        let (_, times, events) = toy(200);
        let preds = vec![0.8; 200];
        let obs = smoothed_observed(&preds, &times, &events, 5.0).unwrap();
        let km = kaplan_meier(&times, &events).eval(5.0);
        assert!(obs.iter().all(|o| *o == km));
    }

    #[test]
    fn too_few_records_or_events() {
        let (p, t, e) = toy(40);
        assert!(matches!(ici(&p, &t, &e, 5.0), Err(Error::UndefinedMetric(_))));
        let (p, t, _) = toy(100);
        let mut e = vec![false; 100];
        e[..4].iter_mut().for_each(|x| *x = true);
        assert!(matches!(ici(&p, &t, &e, 5.0), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn ici_zero_when_predictions_match_observed() {
        let obs = vec![0.9, 0.8, 0.7];
        assert_eq!(ici_from_observed(&obs, &obs), 0.0);
    }

    #[test]
    fn plot_data_has_four_quartiles() {
        let (p, t, e) = toy(400);
        let c = calibration_plot_data(&p, &t, &e, 5.0).unwrap();
        assert_eq!(c.quartiles.len(), 4);
        assert!(c.quartiles.windows(2).all(|w| w[0].mean_pred <= w[1].mean_pred));
        let mut buf = Vec::new();
        write_calibration_csv(&c, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }

    #[test]
    fn constant_predictions_collapse_quartiles() {
        let (_, t, e) = toy(200);
        let c = calibration_plot_data(&vec![0.8; 200], &t, &e, 5.0).unwrap();
        let q0 = &c.quartiles[0];
        assert!(c.quartiles.iter().all(|q| q.mean_pred == q0.mean_pred && q.mean_obs == q0.mean_obs));
        assert!((q0.mean_pred - 0.8).abs() < 1e-12);
    }
}
