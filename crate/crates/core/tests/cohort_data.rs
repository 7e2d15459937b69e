use std::collections::HashSet;

use proptest::prelude::*;
use survtune_core::cohort::TrueCoefficients;
use survtune_core::cohort::*;
use survtune_core::metrics::kaplan_meier;
use survtune_core::{Cohort, PatientRecord};

#[test]
fn uncensored_km_matches_mean_truth() {
    let cfg = GeneratorConfig { n: 50_000, event_rate: None, censoring_rate: 0.0, ..GeneratorConfig::default() };
    let cfg = GeneratorConfig { coefficients: TrueCoefficients { log_scale: Some(-3.0), ..cfg.coefficients.clone() }, ..cfg };
    let s = generate_synthetic(&cfg, 61).unwrap();
    let c = &s.cohort;
    let km = kaplan_meier(&c.times(), &c.events()).eval(5.0);
    let truth = s.true_survival.iter().sum::<f64>() / c.len() as f64;
    assert!((km - truth).abs() < 0.005, "km {km} truth {truth}");
}

#[test]
fn realized_event_fraction_hits_the_target() {
    let s = generate_synthetic(&GeneratorConfig::default(), 62).unwrap();
    assert_eq!(s.cohort.len(), 7563);
    let frac = s.cohort.event_count() as f64 / 7563.0;
    assert!((frac - 0.025).abs() <= 0.005, "{frac}");
    let again = generate_synthetic(&GeneratorConfig::default(), 62).unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    write_csv(&s.cohort, &mut a).unwrap();
    write_csv(&again.cohort, &mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn null_coefficients_give_a_common_truth() {
    let cfg = GeneratorConfig { n: 500, coefficients: TrueCoefficients::zero(), ..GeneratorConfig::default() };
    let s = generate_synthetic(&cfg, 63).unwrap();
    assert!(s.true_survival.iter().all(|p| (p - s.true_survival[0]).abs() < 1e-12));
}

#[test]
fn invalid_rates_are_config_errors() {
    let cfg = GeneratorConfig { censoring_rate: 1.5, ..GeneratorConfig::default() };
    assert!(matches!(generate_synthetic(&cfg, 0), Err(survtune_core::Error::Config(_))));
}

#[test]
fn split_sizes_of_the_reference_cohort() {
    assert_eq!(split_sizes(7563), (4538, 1513, 1512));
    assert_eq!(split_sizes(100), (60, 20, 20));
}

#[test]
fn mapping_rules() {
    let mut r = PatientRecord::new(0, 60.0, 1.0, false);
    r.nodal_stage = Some(NodalStage::N1);
    r.radiotherapy = Some(true);
    r.laterality = Some(Laterality::Left);
    let x = map_to_baseline_input(&r, &MappingProfile::ma27());
    assert_eq!(x.nodes, Some(2.0));
    assert_eq!(x.detection_mode, 0.5);
    assert_eq!(x.heart_dose_gy, Some(2.0));
    r.age = 80.0;
    assert_eq!(map_to_baseline_input(&r, &MappingProfile::ma27()).detection_mode, 0.0);
}

#[test]
fn ingest_reads_the_documented_schema() {
    let text = "age,nodal_stage,node_count,laterality,er,pr,size_mm,grade,radiotherapy,chemotherapy,trastuzumab,time,event\n\
                61.5,N1,,left,1,0,22,2,1,0,,4.2,1\n\
                70,,,,1,1,,,,,,7.5,1\n\
                55,N0,0,right,0,0,10,1,0,1,1,0,0\n";
    let (c, report) = read_csv(text.as_bytes(), 5.0, "inline").unwrap();
    assert_eq!(report.rows_read, 3);
    assert_eq!(report.dropped_nonpositive_time, 1);
    assert_eq!(report.censored_at_horizon, 1);
    assert_eq!(c.len(), 2);
    let r = &c.records[0];
    assert_eq!((r.nodal_stage, r.node_count, r.pr, r.trastuzumab), (Some(NodalStage::N1), None, Some(false), None));
    assert_eq!((c.records[1].time, c.records[1].event), (5.0, false));
    assert!(c.records[1].grade.is_none() && c.records[1].size_mm.is_none());

    let bad = text.replace("node_count", "nodes");
    assert!(matches!(read_csv(bad.as_bytes(), 5.0, "x"), Err(survtune_core::Error::Schema { .. })));
}

fn small_cohort(n: usize) -> Cohort {
    let records = (0..n).map(|i| PatientRecord::new(i as u64, 50.0, 1.0 + (i % 3) as f64, i % 4 == 0)).collect();
    Cohort::new(records, 5.0, "t").unwrap()
}

fn any_record() -> impl Strategy<Value = PatientRecord> {
    (
        18.0f64..100.0,
        proptest::option::of(0usize..4),
        proptest::option::of(0u32..40),
        proptest::option::of(0usize..3),
        proptest::option::of(1.0f64..120.0),
        proptest::option::of(1u8..=3),
        proptest::array::uniform5(proptest::option::of(any::<bool>())),
    )
        .prop_map(|(age, stage, count, lat, size, grade, flags)| PatientRecord {
            id: 0,
            age,
            nodal_stage: stage.map(|s| NodalStage::ALL[s]),
            node_count: count,
            laterality: lat.map(|l| Laterality::ALL[l]),
            er: flags[0],
            pr: flags[1],
            size_mm: size,
            grade: grade.and_then(Grade::from_number),
            radiotherapy: flags[2],
            chemotherapy: flags[3],
            trastuzumab: flags[4],
            time: 1.0,
            event: false,
        })
}

proptest! {
    #[test]
    fn split_is_a_partition(n in 10usize..400, seed in any::<u64>()) {
        let c = small_cohort(n);
        let s = split_cohort(&c, seed).unwrap();
        let (a, b, cc) = split_sizes(n);
        prop_assert_eq!((s.train_a.len(), s.test_b.len(), s.valid_c.len()), (a, b, cc));
        let ids: Vec<u64> = [&s.train_a, &s.test_b, &s.valid_c].iter().flat_map(|c| c.ids()).collect();
        let unique: HashSet<u64> = ids.iter().copied().collect();
        prop_assert_eq!(ids.len(), n);
        prop_assert_eq!(unique.len(), n);
        prop_assert_eq!(split_cohort(&c, seed).unwrap().valid_c.ids(), s.valid_c.ids());
    }

    #[test]
    fn mapping_is_total_and_keeps_missing_markers(r in any_record()) {
        for profile in [MappingProfile::ma27(), MappingProfile::seer(), MappingProfile::team()] {
            let x = map_to_baseline_input(&r, &profile);
            prop_assert_eq!(x.size_mm.is_none(), r.size_mm.is_none());
            prop_assert_eq!(x.grade.is_none(), r.grade.is_none());
            prop_assert_eq!(x.radiotherapy.is_none(), r.radiotherapy.is_none());
            prop_assert_eq!(x.nodes.is_none(), r.nodal_stage.is_none() && (profile.nodal_source == NodalSource::StageApproximation || r.node_count.is_none()));
        }
    }
}
