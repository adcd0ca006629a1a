use cavlane_core::comm::reception_detail;
use cavlane_core::energy::fuel_rate;
use cavlane_core::io::{read_raw, write_raw};
use cavlane_core::metrics::{ks_two_sample, lane_aggregates, EmpiricalCdf};
use cavlane_core::{
    run_replication, CommCoefficients, CommParams, DetectorRecord, Policy, Scenario, VehicleClass,
    VtMicroCoefficients,
};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn reception_stays_a_probability(x in 0.0..600.0f64, delta in 0.0..400.0f64, phi in 50.0..1000.0f64, f in 1.0..20.0f64) {
        let r = reception_detail(x, delta, phi, f, &CommCoefficients::builtin());
        prop_assert!((0.0..=1.0).contains(&r.p));
    }

    #[test]
    fn xi_is_linear(delta in 0.0..200.0f64, k in 0.1..10.0f64) {
        let p = CommParams::default();
        let base = p.xi(delta);
        for scaled in [p.xi(delta * k), CommParams { phi: p.phi * k, ..p.clone() }.xi(delta), CommParams { f: p.f * k, ..p.clone() }.xi(delta)] {
            prop_assert!((scaled - k * base).abs() <= 1e-9 * scaled.max(1.0));
        }
    }

    #[test]
    fn fuel_is_positive(v in 0.0..45.0f64, a in -9.0..4.0f64) {
        let r = fuel_rate(v, a, &VtMicroCoefficients::builtin());
        prop_assert!(r > 0.0 && r.is_finite());
    }

    #[test]
    fn cdf_is_a_distribution(xs in prop::collection::vec(-50.0..50.0f64, 1..60), probes in prop::collection::vec(-60.0..60.0f64, 2..20)) {
        let cdf = EmpiricalCdf::new(&xs).unwrap();
        let mut p = probes.clone();
        p.sort_by(f64::total_cmp);
        for w in p.windows(2) {
            prop_assert!(cdf.eval(w[0]) <= cdf.eval(w[1]));
        }
        let max = xs.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(cdf.eval(max), 1.0);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&cdf.eval(x))));
    }

    #[test]
    fn ks_is_symmetric(a in prop::collection::vec(0.0..10.0f64, 1..40), b in prop::collection::vec(0.0..10.0f64, 1..40)) {
        let ab = ks_two_sample(&a, &b).unwrap();
        let ba = ks_two_sample(&b, &a).unwrap();
        prop_assert_eq!(ab.d, ba.d);
        prop_assert!((0.0..=1.0).contains(&ab.d));
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn harmonic_speed_below_arithmetic(speeds in prop::collection::vec(0.5..40.0f64, 1..50)) {
        let records: Vec<DetectorRecord> = speeds.iter().enumerate().map(|(k, &s)| DetectorRecord {
            detector: 0,
            lane: 1,
            vehicle: k as u64,
            class: VehicleClass::Hv,
            time: k as f64,
            speed: s,
            accel: 0.0,
            headway: None,
        }).collect();
        for g in lane_aggregates(&records, 0.0) {
            prop_assert!(g.speed_kmh.unwrap() <= g.arithmetic_speed_kmh.unwrap() + 1e-9);
            prop_assert!(g.flow_vph >= 0.0);
        }
    }

    #[test]
    fn validation_is_deterministic(mpr in 0.0..=1.0f64, policy in prop_oneof![Just(Policy::Nml), Just(Policy::Cav1), Just(Policy::Cav2)]) {
        let s = Scenario::default().with(policy, mpr, 1);
        let a = s.clone().validate().map(|v| v.into_inner().to_toml_string()).map_err(|e| format!("{e:?}"));
        let b = s.validate().map(|v| v.into_inner().to_toml_string()).map_err(|e| format!("{e:?}"));
        prop_assert_eq!(a.clone(), b);
        prop_assert_eq!(a.is_ok(), mpr >= policy.min_mpr() - 1e-12);
    }
}

#[test]
fn raw_outputs_round_trip_with_hash() {
    let mut s = Scenario::default().with(Policy::Cav2, 0.5, 4);
    s.config.warmup_duration = 30.0;
    s.config.measured_duration = 90.0;
    let r = run_replication(&s.validate().unwrap(), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_raw(dir.path(), &r).unwrap();
    let back = read_raw(dir.path()).unwrap();
    assert_eq!(back.summary.result_hash, r.summary.result_hash);
    assert_eq!(cavlane_core::io::results_hash(&back), r.summary.result_hash);
}
