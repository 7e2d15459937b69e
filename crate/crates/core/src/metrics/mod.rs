//! Censoring-aware evaluation: Kaplan-Meier, IPCW time-dependent AUC, ICI and
//! bootstrap confidence intervals.

mod auc;
mod bootstrap;
mod calibration;
mod km;

pub use auc::{ipcw_auc, roc_curve_data, write_roc_csv, RocPoint};
pub use bootstrap::{bootstrap_ci, BootstrapCi};
pub use calibration::{
    calibration_plot_data, ici, ici_from_observed, rcs_basis, smoothed_observed, write_calibration_csv,
    CalibrationCurve, QuartileSummary, CLAMP_EPS,
};
pub use km::{kaplan_meier, kaplan_meier_censoring, StepFunction};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Optimization target used for fine-tuning, grid search and ensemble weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Ici,
    Auc,
}

impl Objective {
    /// Value to minimize for survival predictions `preds` at horizon `t`:
    /// the ICI, or the negated IPCW AUC of the implied risks.
    pub fn loss(self, preds: &[f64], times: &[f64], events: &[bool], t: f64) -> Result<f64> {
        match self {
            Objective::Ici => ici(preds, times, events, t),
            Objective::Auc => {
                let risks: Vec<f64> = preds.iter().map(|p| 1.0 - p).collect();
                ipcw_auc(&risks, times, events, t).map(|a| -a)
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Ici => "ici",
            Objective::Auc => "auc",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ici" => Ok(Objective::Ici),
            "auc" => Ok(Objective::Auc),
            other => Err(crate::error::Error::Config(format!("unknown objective `{other}`"))),
        }
    }
}
