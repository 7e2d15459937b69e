use proptest::prelude::*;
use survtune_core::baseline::*;
use survtune_core::cohort::{generate_synthetic, map_to_baseline_input, GeneratorConfig, MappingProfile};
use survtune_core::metrics::{ici, Objective};
use survtune_core::{Cohort, PatientRecord};

fn ici_of(p: &BaselineParamVector, c: &Cohort, t: f64) -> f64 {
    let profile = MappingProfile::ma27();
    let preds = predict_cohort(p, c, &profile, t, "b").unwrap();
    let keep: Vec<usize> = (0..c.len()).filter(|&i| preds[i].valid).collect();
    let probs: Vec<f64> = keep.iter().map(|&i| preds[i].prob.unwrap()).collect();
    let times: Vec<f64> = keep.iter().map(|&i| c.records[i].time).collect();
    let events: Vec<bool> = keep.iter().map(|&i| c.records[i].event).collect();
    ici(&probs, &times, &events, t).unwrap()
}

#[test]
fn fine_tuning_recovers_calibration() {
    let cfg = GeneratorConfig { n: 4000, event_rate: Some(0.15), ..GeneratorConfig::default() };
    let synth = generate_synthetic(&cfg, 31).unwrap();
    let truth = synth.true_params;
    let mut start = truth.clone();
    for name in ["bc_log_nodes", "bc_grade3"] {
        start.set(name, truth.get(name).unwrap() + 0.5).unwrap();
    }
    let profile = MappingProfile::ma27();
    let res = fine_tune(&start, &synth.cohort, &profile, Objective::Ici, 5.0, &default_nm_config()).unwrap();
    assert!(res.trace.windows(2).all(|w| w[1] <= w[0]));
    assert!(res.objective_end <= res.objective_start);
    let tuned = ici_of(&res.params, &synth.cohort, 5.0);
    let oracle = ici_of(&truth, &synth.cohort, 5.0);
    assert!(tuned <= oracle + 0.01, "tuned {tuned} oracle {oracle}");
    assert!((res.objective_end - tuned).abs() < 1e-12);

    let again = fine_tune(&start, &synth.cohort, &profile, Objective::Ici, 5.0, &default_nm_config()).unwrap();
    assert_eq!(again.params, res.params);
}

#[test]
fn treatment_benefit_raises_survival() {
    let mut r = PatientRecord::new(0, 58.0, 2.0, false);
    r.chemotherapy = Some(true);
    let x = map_to_baseline_input(&r, &MappingProfile::ma27());
    let mut p = BaselineParamVector::reference();
    p.set("tx_chemo", 0.0).unwrap();
    let without = predict_survival(&p, &x, 5.0).unwrap().prob.unwrap();
    p.set("tx_chemo", -0.4).unwrap();
    let with = predict_survival(&p, &x, 5.0).unwrap().prob.unwrap();
    assert!(with > without);
}

#[test]
fn missing_mandatory_inputs_are_reported() {
    let mut r = PatientRecord::new(0, 58.0, 2.0, false);
    r.grade = None;
    r.size_mm = None;
    let s = predict_survival(&BaselineParamVector::reference(), &map_to_baseline_input(&r, &MappingProfile::ma27()), 5.0).unwrap();
    assert!(!s.valid && s.prob.is_none());
    assert_eq!(s.missing_mandatory, vec!["size_mm".to_string(), "grade".to_string()]);
}

#[test]
fn parameter_vectors_round_trip_by_name() {
    let p = BaselineParamVector::reference();
    let s = serde_json::to_string(&p).unwrap();
    assert!(s.contains("\"bc_log_scale\""));
    let back: BaselineParamVector = serde_json::from_str(&s).unwrap();
    assert_eq!(back, p);
    assert_eq!(param_index("oth_radiotherapy"), Some(N_PARAMS - 1));
}

fn record_strategy() -> impl Strategy<Value = PatientRecord> {
    (30.0f64..90.0, 1.0f64..80.0, 0u32..4, 1u8..=3, any::<[bool; 5]>()).prop_map(|(age, size, stage, grade, flags)| {
        let mut r = PatientRecord::new(0, age, 1.0, false);
        r.size_mm = Some(size);
        r.nodal_stage = Some(survtune_core::cohort::NodalStage::ALL[stage as usize]);
        r.grade = survtune_core::cohort::Grade::from_number(grade);
        r.er = Some(flags[0]);
        r.pr = Some(flags[1]);
        r.radiotherapy = Some(flags[2]);
        r.chemotherapy = Some(flags[3]);
        r.trastuzumab = Some(flags[4]);
        r
    })
}

proptest! {
    #[test]
    fn survival_is_a_nonincreasing_probability(r in record_strategy(), t1 in 0.01f64..15.0, dt in 0.0f64..10.0) {
        let x = map_to_baseline_input(&r, &MappingProfile::ma27());
        let p = BaselineParamVector::reference();
        let a = predict_survival(&p, &x, t1).unwrap().prob.unwrap();
        let b = predict_survival(&p, &x, t1 + dt).unwrap().prob.unwrap();
        prop_assert!(a > 0.0 && a <= 1.0);
        prop_assert!(b <= a);
    }
}
