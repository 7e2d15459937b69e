//! Synthetic cohorts with a known data-generating model.
//!
//! Breast-cancer event times are Weibull with a log-hazard linear in the
//! covariates. The hazard is the baseline model's own breast-cancer hazard
//! under a known parameter vector (other-cause hazard switched off), so the
//! true survival at the horizon is available for every record.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use super::{map_to_baseline_input, Cohort, Grade, Laterality, MappingProfile, NodalStage, PatientRecord};
use crate::baseline::{self, BaselineParamVector, DesignRow};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CategoricalMarginals {
    pub age_mean: f64,
    pub age_sd: f64,
    pub age_min: f64,
    pub age_max: f64,
    /// N0..N3.
    pub nodal_stage: [f64; 4],
    /// left, right, bilateral.
    pub laterality: [f64; 3],
    pub er_positive: f64,
    pub pr_positive: f64,
    pub size_median_mm: f64,
    pub size_log_sd: f64,
    /// Grade 1..3.
    pub grade: [f64; 3],
    pub radiotherapy: f64,
    pub chemotherapy: f64,
    pub trastuzumab: f64,
}

impl Default for CategoricalMarginals {
    fn default() -> Self {
        CategoricalMarginals {
            age_mean: 64.5,
            age_sd: 9.5,
            age_min: 45.0,
            age_max: 95.0,
            nodal_stage: [0.719, 0.217, 0.048, 0.016],
            laterality: [0.501, 0.484, 0.015],
            er_positive: 0.993,
            pr_positive: 0.82,
            size_median_mm: 15.0,
            size_log_sd: 0.5,
            grade: [0.32, 0.505, 0.175],
            radiotherapy: 0.711,
            chemotherapy: 0.308,
            trastuzumab: 0.035,
        }
    }
}

/// Per-field missingness rates. When `correlated` is set, the fields required
/// by the baseline model (size, grade, radiotherapy, nodal stage) go missing
/// together: a single uniform draw per record is compared against each rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissingnessConfig {
    pub size_mm: f64,
    pub grade: f64,
    pub radiotherapy: f64,
    pub nodal_stage: f64,
    pub pr: f64,
    pub trastuzumab: f64,
    pub correlated: bool,
}

impl Default for MissingnessConfig {
    fn default() -> Self {
        MissingnessConfig {
            size_mm: 0.207,
            grade: 0.219,
            radiotherapy: 0.289,
            nodal_stage: 0.001,
            pr: 0.02,
            trastuzumab: 0.747,
            correlated: true,
        }
    }
}

impl MissingnessConfig {
    pub fn none() -> Self {
        MissingnessConfig {
            size_mm: 0.0,
            grade: 0.0,
            radiotherapy: 0.0,
            nodal_stage: 0.0,
            pr: 0.0,
            trastuzumab: 0.0,
            correlated: false,
        }
    }
}

/// True breast-cancer log-hazard coefficients (age per decade, log size
/// relative to 15 mm, `ln(nodes + 1)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrueCoefficients {
    pub age: f64,
    pub log_size: f64,
    pub log_nodes: f64,
    pub grade2: f64,
    pub grade3: f64,
    pub er: f64,
    pub pr: f64,
    pub chemotherapy: f64,
    pub trastuzumab: f64,
    pub radiotherapy: f64,
    pub shape: f64,
    /// Baseline log-scale; solved from `event_rate` when absent.
    pub log_scale: Option<f64>,
}

impl Default for TrueCoefficients {
    fn default() -> Self {
        TrueCoefficients {
            age: 0.15,
            log_size: 0.6,
            log_nodes: 0.55,
            grade2: 0.45,
            grade3: 0.9,
            er: -0.4,
            pr: -0.3,
            chemotherapy: -0.25,
            trastuzumab: -0.3,
            radiotherapy: -0.2,
            shape: 1.2,
            log_scale: None,
        }
    }
}

impl TrueCoefficients {
    pub fn zero() -> Self {
        TrueCoefficients {
            age: 0.0,
            log_size: 0.0,
            log_nodes: 0.0,
            grade2: 0.0,
            grade3: 0.0,
            er: 0.0,
            pr: 0.0,
            chemotherapy: 0.0,
            trastuzumab: 0.0,
            radiotherapy: 0.0,
            shape: 1.2,
            log_scale: None,
        }
    }

    fn params(&self, log_scale: f64) -> BaselineParamVector {
        let mut p = BaselineParamVector::null(OTHER_CAUSE_LOG_SCALE, 1.0);
        p.0[baseline::BC_LOG_SCALE] = log_scale;
        p.0[baseline::BC_SHAPE] = self.shape;
        for (name, v) in [
            ("bc_age", self.age),
            ("bc_log_size", self.log_size),
            ("bc_log_nodes", self.log_nodes),
            ("bc_grade2", self.grade2),
            ("bc_grade3", self.grade3),
            ("bc_er", self.er),
            ("bc_pr", self.pr),
            ("tx_chemo", self.chemotherapy),
            ("tx_trastuzumab", self.trastuzumab),
            ("tx_radiotherapy", self.radiotherapy),
        ] {
            p.set(name, v).expect("known parameter name");
        }
        p
    }
}

/// Effectively no other-cause mortality in synthetic data.
const OTHER_CAUSE_LOG_SCALE: f64 = -40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub version: u32,
    pub n: usize,
    pub horizon: f64,
    /// Target fraction of records with an observed event.
    pub event_rate: Option<f64>,
    /// Fraction of records exposed to uniform random censoring on `(0, horizon)`.
    pub censoring_rate: f64,
    pub marginals: CategoricalMarginals,
    pub missingness: MissingnessConfig,
    pub coefficients: TrueCoefficients,
    /// Multiplies the baseline hazard after the log-scale is fixed.
    pub hazard_multiplier: f64,
    /// Emit exact node counts (consistent with the N stage).
    pub emit_node_count: bool,
    /// Mapping profile used to evaluate the true hazard.
    pub profile: String,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            version: 1,
            n: 7563,
            horizon: 5.0,
            event_rate: Some(0.025),
            censoring_rate: 0.4,
            marginals: CategoricalMarginals::default(),
            missingness: MissingnessConfig::default(),
            coefficients: TrueCoefficients::default(),
            hazard_multiplier: 1.0,
            emit_node_count: false,
            profile: "ma27".into(),
        }
    }
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

fn check_distribution(name: &str, probs: &[f64]) -> Result<()> {
    for p in probs {
        check_rate(name, *p)?;
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(Error::Config(format!("{name} probabilities sum to {s}, expected 1")));
    }
    Ok(())
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::Config(format!("unsupported generator config version {}", self.version)));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Config("horizon must be > 0".into()));
        }
        if let Some(r) = self.event_rate {
            check_rate("event_rate", r)?;
            if r == 0.0 || r == 1.0 {
                return Err(Error::Config("event_rate must lie strictly inside (0, 1)".into()));
            }
        }
        check_rate("censoring_rate", self.censoring_rate)?;
        let m = &self.marginals;
        check_distribution("nodal_stage", &m.nodal_stage)?;
        check_distribution("laterality", &m.laterality)?;
        check_distribution("grade", &m.grade)?;
        for (name, v) in [
            ("er_positive", m.er_positive),
            ("pr_positive", m.pr_positive),
            ("radiotherapy", m.radiotherapy),
            ("chemotherapy", m.chemotherapy),
            ("trastuzumab", m.trastuzumab),
        ] {
            check_rate(name, v)?;
        }
        if !(m.age_sd >= 0.0 && m.age_min > 0.0 && m.age_max >= m.age_min) {
            return Err(Error::Config("invalid age marginal".into()));
        }
        if !(m.size_median_mm > 0.0 && m.size_log_sd >= 0.0) {
            return Err(Error::Config("invalid size marginal".into()));
        }
        let x = &self.missingness;
        for (name, v) in [
            ("missingness.size_mm", x.size_mm),
            ("missingness.grade", x.grade),
            ("missingness.radiotherapy", x.radiotherapy),
            ("missingness.nodal_stage", x.nodal_stage),
            ("missingness.pr", x.pr),
            ("missingness.trastuzumab", x.trastuzumab),
        ] {
            check_rate(name, v)?;
        }
        if !(self.coefficients.shape > 0.0) {
            return Err(Error::Config("Weibull shape must be > 0".into()));
        }
        if self.coefficients.log_scale.is_none() && self.event_rate.is_none() {
            return Err(Error::Config("either coefficients.log_scale or event_rate must be set".into()));
        }
        if !(self.hazard_multiplier > 0.0) {
            return Err(Error::Config("hazard_multiplier must be > 0".into()));
        }
        MappingProfile::by_name(&self.profile)?;
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: GeneratorConfig = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    /// True survival to the horizon, aligned with `cohort.records`.
    pub true_survival: Vec<f64>,
    /// Parameters of the baseline model that generated the events.
    pub true_params: BaselineParamVector,
}

fn categorical<R: rand::Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn draw_latent<R: rand::Rng>(rng: &mut R, id: u64, cfg: &GeneratorConfig) -> PatientRecord {
    let m = &cfg.marginals;
    let age = Normal::new(m.age_mean, m.age_sd).expect("validated").sample(rng).clamp(m.age_min, m.age_max);
    let stage = NodalStage::ALL[categorical(rng, &m.nodal_stage)];
    let node_count = match stage {
        NodalStage::N0 => 0,
        NodalStage::N1 => rng.random_range(1..=3),
        NodalStage::N2 => rng.random_range(4..=9),
        NodalStage::N3 => rng.random_range(10..=25),
    };
    let laterality = Laterality::ALL[categorical(rng, &m.laterality)];
    let er = rng.random_bool(m.er_positive);
    let pr = rng.random_bool(m.pr_positive);
    let size = LogNormal::new(m.size_median_mm.ln(), m.size_log_sd).expect("validated").sample(rng).max(1.0);
    let grade = Grade::ALL[categorical(rng, &m.grade)];
    let radiotherapy = rng.random_bool(m.radiotherapy);
    let chemotherapy = rng.random_bool(m.chemotherapy);
    let trastuzumab = rng.random_bool(m.trastuzumab);
    PatientRecord {
        id,
        age,
        nodal_stage: Some(stage),
        node_count: cfg.emit_node_count.then_some(node_count),
        laterality: Some(laterality),
        er: Some(er),
        pr: Some(pr),
        size_mm: Some(size),
        grade: Some(grade),
        radiotherapy: Some(radiotherapy),
        chemotherapy: Some(chemotherapy),
        trastuzumab: Some(trastuzumab),
        time: cfg.horizon,
        event: false,
    }
}

fn apply_missingness<R: rand::Rng>(rng: &mut R, r: &mut PatientRecord, x: &MissingnessConfig) {
    let shared: f64 = rng.random();
    let mut draw = |rate: f64, correlated: bool| {
        let u = if correlated { shared } else { rng.random::<f64>() };
        u < rate
    };
    let c = x.correlated;
    if draw(x.size_mm, c) {
        r.size_mm = None;
    }
    if draw(x.grade, c) {
        r.grade = None;
    }
    if draw(x.radiotherapy, c) {
        r.radiotherapy = None;
    }
    if draw(x.nodal_stage, c) {
        r.nodal_stage = None;
        r.node_count = None;
    }
    if draw(x.pr, false) {
        r.pr = None;
    }
    if draw(x.trastuzumab, false) {
        r.trastuzumab = None;
    }
}

const SIMPSON_STEPS: usize = 64;

/// Simpson nodes `u^shape` on (0, horizon) and weights averaging over the interval.
fn simpson_nodes(shape: f64, horizon: f64) -> Vec<(f64, f64)> {
    let h = horizon / SIMPSON_STEPS as f64;
    (0..=SIMPSON_STEPS)
        .map(|k| {
            let w = if k == 0 || k == SIMPSON_STEPS { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            ((k as f64 * h).powf(shape), w * h / 3.0 / horizon)
        })
        .collect()
}

/// Expected fraction of observed events given per-record `exp(eta)`.
fn expected_event_fraction(log_scale: f64, exp_etas: &[f64], nodes: &[(f64, f64)], censoring_rate: f64) -> f64 {
    let base = log_scale.exp();
    let end = nodes.last().unwrap().0;
    let mut total = 0.0;
    for &r in exp_etas {
        let scale = base * r;
        let cdf = |upow: f64| -(-scale * upow).exp_m1();
        let mean_cdf: f64 = nodes.iter().map(|&(upow, w)| w * cdf(upow)).sum();
        total += (1.0 - censoring_rate) * cdf(end) + censoring_rate * mean_cdf;
    }
    total / exp_etas.len() as f64
}

fn solve_log_scale(target: f64, etas: &[f64], shape: f64, horizon: f64, censoring_rate: f64) -> f64 {
    let nodes = simpson_nodes(shape, horizon);
    let exp_etas: Vec<f64> = etas.iter().map(|e| e.exp()).collect();
    let (mut lo, mut hi) = (-40.0, 20.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if expected_event_fraction(mid, &exp_etas, &nodes, censoring_rate) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn generate_synthetic(cfg: &GeneratorConfig, seed: u64) -> Result<SyntheticCohort> {
    cfg.validate()?;
    let profile = MappingProfile::by_name(&cfg.profile)?;
    let mut rng = rng::seeded(seed);
    let latent: Vec<PatientRecord> = (0..cfg.n).map(|i| draw_latent(&mut rng, i as u64, cfg)).collect();
    let rows: Vec<DesignRow> = latent
        .iter()
        .map(|r| DesignRow::from_input(&map_to_baseline_input(r, &profile)).expect("latent records are complete"))
        .collect();

    let coef = &cfg.coefficients;
    let zero_scale = coef.params(0.0);
    // Linear predictor without the baseline log-scale: H(t) = exp(a + eta) t^b.
    let etas: Vec<f64> = rows.iter().map(|row| row.bc_cumulative_hazard(&zero_scale, 1.0).ln()).collect();
    let log_scale = match coef.log_scale {
        Some(a) => a,
        None => solve_log_scale(
            cfg.event_rate.expect("validated"),
            &etas,
            coef.shape,
            cfg.horizon,
            cfg.censoring_rate,
        ),
    } + cfg.hazard_multiplier.ln();
    let true_params = coef.params(log_scale);

    let mut records = Vec::with_capacity(cfg.n);
    let mut true_survival = Vec::with_capacity(cfg.n);
    for (mut r, eta) in latent.into_iter().zip(&etas) {
        let scale = (log_scale + eta).exp();
        true_survival.push((-scale * cfg.horizon.powf(coef.shape)).exp());
        let e: f64 = Exp1.sample(&mut rng);
        let t_event = (e / scale).powf(1.0 / coef.shape);
        let t_cens = if rng.random_bool(cfg.censoring_rate) {
            rng.random_range(0.0..cfg.horizon)
        } else {
            f64::INFINITY
        };
        let time = t_event.min(t_cens).min(cfg.horizon);
        r.event = t_event <= t_cens && t_event <= cfg.horizon;
        r.time = time.max(1e-9);
        apply_missingness(&mut rng, &mut r, &cfg.missingness);
        records.push(r);
    }
    let cohort = Cohort::new(records, cfg.horizon, format!("synthetic(seed={seed})"))?;
    Ok(SyntheticCohort { cohort, true_survival, true_params })
}
