use cavlane_core::longitudinal::{
    blend, cah_accel, desired_gap, eidm_accel, hv_accel, idm_accel, AccelNoise, EMERGENCY_DECEL,
};
use cavlane_core::{EidmParams, HvParams, LeaderView, VehicleClass, SIM_STEP};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn leader(gap: f64, speed: f64, accel: f64) -> LeaderView {
    LeaderView { gap, speed, accel, class: VehicleClass::Cav }
}

/// Follower on E-IDM behind a leader that brakes at `b` to a stop; returns
/// the smallest bumper gap seen.
fn braking_episode(gap0: f64, v0: f64, b: f64, p: &EidmParams) -> f64 {
    let dt = SIM_STEP;
    let (mut xl, mut vl) = (gap0, v0);
    let (mut xf, mut vf, mut af) = (0.0, v0, 0.0);
    let mut min_gap = gap0;
    for _ in 0..1200 {
        let al = if vl > 0.0 { -b } else { 0.0 };
        let view = leader(xl - xf, vl, al);
        af = eidm_accel(vf, af, Some(&view), p.t_intra, p);
        let step = |x: &mut f64, v: &mut f64, a: f64| {
            let nv = *v + a * dt;
            if nv < 0.0 {
                *x += *v * *v / (2.0 * -a);
                *v = 0.0;
            } else {
                *x += *v * dt + 0.5 * a * dt * dt;
                *v = nv;
            }
        };
        step(&mut xl, &mut vl, al);
        step(&mut xf, &mut vf, af);
        min_gap = min_gap.min(xl - xf);
    }
    min_gap
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn eidm_bounded(v in 0.0..40.0f64, own in -9.0..2.0f64, gap in 0.1..300.0f64,
                    vl in 0.0..40.0f64, al in -9.0..2.0f64, t in prop_oneof![Just(0.6), Just(1.2)]) {
        let p = EidmParams::default();
        let l = leader(gap, vl, al);
        let a = eidm_accel(v, own, Some(&l), t, &p);
        let a_idm = idm_accel(v, Some(&l), t, &p.idm());
        prop_assert!(a.is_finite());
        prop_assert!(a >= EMERGENCY_DECEL);
        prop_assert!(a <= p.a_max + 1e-12);
        let a_cah = cah_accel(v, own, &l);
        prop_assert!(a <= a_idm.max(a_cah).max(EMERGENCY_DECEL) + 1e-9);
        prop_assert!(a >= a_idm.max(EMERGENCY_DECEL) - 1e-9);
    }

    #[test]
    fn blend_continuous_at_equality(x in -9.0..2.0f64, eps in 0.0..1e-10f64) {
        prop_assert!((blend(x, x, 2.0, 0.99) - x).abs() < 1e-9);
        prop_assert!((blend(x - eps, x, 2.0, 0.99) - (x - eps)).abs() < 1e-9);
    }

    #[test]
    fn desired_gap_monotone_in_speed(v in 0.0..40.0f64, dv in 0.0..10.0f64, t in 0.1..2.0f64) {
        let p = EidmParams::default().idm();
        prop_assert!(desired_gap(v + dv, v + dv, t, &p) >= desired_gap(v, v, t, &p));
    }

    #[test]
    fn silent_human_is_idm(v in 0.0..40.0f64, gap in 0.5..200.0f64, vl in 0.0..40.0f64, seed: u64) {
        let p = HvParams { noise_sigma: 0.0, ..HvParams::default() };
        let l = leader(gap, vl, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise = AccelNoise::default();
        let a = hv_accel(v, Some(&l), 33.0, &p, &mut noise, &mut rng);
        let b = idm_accel(v, Some(&l), 1.4, &p.idm(33.0)).max(EMERGENCY_DECEL);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn follower_survives_leader_braking(gap0 in 1.0..120.0f64, frac in 0.0..=1.0f64, b in 0.0..=2.0f64) {
        let p = EidmParams::default();
        let v0 = frac * p.desired_speed();
        prop_assert!(braking_episode(gap0, v0, b, &p) > 0.0);
    }
}

#[test]
fn braking_grid_never_collides() {
    let p = EidmParams::default();
    for gap0 in [1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 80.0] {
        for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
            for b in [0.5, 1.0, 1.5, 2.0] {
                let m = braking_episode(gap0, frac * p.desired_speed(), b, &p);
                assert!(m > 0.0, "gap0={gap0} v0={} b={b}: min gap {m}", frac * p.desired_speed());
            }
        }
    }
}
