use cavlane_core::lateral::LanePolicy;
use cavlane_core::{
    run_replication, DemandSpec, NetworkSpec, Policy, Scenario, ValidatedScenario, VehicleClass, World,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn short(policy: Policy, mpr: f64, seed: u64) -> ValidatedScenario {
    let mut s = Scenario::default().with(policy, mpr, seed);
    s.config.warmup_duration = 60.0;
    s.config.measured_duration = 240.0;
    s.validate().unwrap()
}

#[test]
fn same_seed_same_hash() {
    let scn = short(Policy::Cav1, 0.6, 11);
    let a = run_replication(&scn, 11).unwrap();
    let b = run_replication(&scn, 11).unwrap();
    let c = run_replication(&scn, 12).unwrap();
    assert_eq!(a.summary.result_hash, b.summary.result_hash);
    assert_eq!(a.detectors, b.detectors);
    assert_ne!(a.summary.result_hash, c.summary.result_hash);
}

#[test]
fn every_step_conserves_and_respects_lanes() {
    for (policy, mpr) in [(Policy::Nml, 0.3), (Policy::Cav1, 0.5), (Policy::Cav2, 0.8)] {
        let scn = short(policy, mpr, 3);
        let lanes = LanePolicy::new(policy, scn.network.lane_count);
        let mut w = World::with_seed(&scn, 3);
        for _ in 0..3000 {
            w.step().unwrap();
            assert_eq!(w.spawned(), w.present() + w.exited() + w.latent());
            for v in w.vehicles() {
                assert!(v.position.is_finite() && v.speed.is_finite() && v.accel.is_finite());
                assert!(v.speed >= 0.0);
                if v.lane > 0 {
                    assert!(lanes.allows(v.class, v.lane).unwrap(), "{policy}: {:?} in lane {}", v.class, v.lane);
                }
            }
        }
        assert!(w.min_gap() > 0.0);
        let r = w.finish();
        assert_eq!(r.summary.ineligible, 0);
    }
}

#[test]
fn managed_lane_carries_only_cavs() {
    let r = run_replication(&short(Policy::Cav1, 0.4, 5), 5).unwrap();
    let lane4: Vec<_> = r.detectors.iter().filter(|d| d.lane == 4).collect();
    assert!(!lane4.is_empty());
    assert!(lane4.iter().all(|d| d.class == VehicleClass::Cav));
}

#[test]
fn vehicle_classes_follow_mpr() {
    let mpr = 0.37;
    let mut s = Scenario {
        network: NetworkSpec::single_lane(2000.0, vec![1000.0]),
        demand: DemandSpec::mainline_only(1800.0, mpr),
        ..Scenario::default()
    };
    s.config.warmup_duration = 0.0;
    s.config.measured_duration = 21_600.0;
    s.set_mpr(mpr);
    let r = run_replication(&s.validate().unwrap(), 99).unwrap();
    assert!(r.vehicles.len() >= 10_000, "{} vehicles", r.vehicles.len());
    let n = r.vehicles.len() as f64;
    let cav = r.vehicles.iter().filter(|v| v.class == VehicleClass::Cav).count() as f64;
    let chi2 = (cav - n * mpr).powi(2) / (n * mpr) + (n - cav - n * (1.0 - mpr)).powi(2) / (n * (1.0 - mpr));
    let p = 1.0 - ChiSquared::new(1.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2}, p {p}");
}
