use cavlane_core::longitudinal::desired_gap;
use cavlane_core::{
    CommMode, DemandSpec, NetworkSpec, Policy, Scenario, VehicleClass, VehicleId, World,
};

fn corridor(cav_kmh: f64, hv_kmh: f64) -> Scenario {
    let mut s = Scenario {
        network: NetworkSpec::single_lane(30_000.0, vec![25_000.0]),
        demand: DemandSpec::mainline_only(0.0, 0.5),
        ..Scenario::default()
    };
    s.config.policy = Policy::Nml;
    s.config.comm_mode = CommMode::AlwaysOn;
    s.config.warmup_duration = 0.0;
    s.set_mpr(0.5);
    s.eidm.desired_speed_kmh = cav_kmh;
    s.hv.desired_speed_mean_kmh = hv_kmh;
    s.hv.desired_speed_sd_kmh = 0.0;
    s.hv.desired_speed_min_kmh = hv_kmh.min(30.0);
    s.hv.desired_speed_max_kmh = hv_kmh.max(130.0);
    s.hv.noise_sigma = 0.0;
    s
}

/// Places a slow head vehicle and `n` followers 15 m apart, runs `seconds`,
/// and returns the final (gap, speed) of each follower.
fn settle(s: Scenario, head: VehicleClass, follower: VehicleClass, n: usize, seconds: f64) -> Vec<(f64, f64)> {
    let scn = s.validate().expect("valid corridor");
    let mut w = World::with_seed(&scn, 7);
    let mut ids: Vec<VehicleId> = Vec::new();
    let mut x = 200.0 + 20.0 * n as f64;
    ids.push(w.place_vehicle(head, 1, x, 8.0).unwrap());
    for _ in 0..n {
        x -= 20.0;
        ids.push(w.place_vehicle(follower, 1, x, 8.0).unwrap());
    }
    for _ in 0..(seconds / 0.1) as usize {
        w.step().unwrap();
    }
    ids.windows(2)
        .map(|p| {
            let (l, f) = (w.vehicle(p[0]).unwrap(), w.vehicle(p[1]).unwrap());
            (l.rear() - f.position, f.speed)
        })
        .collect()
}

#[test]
fn cav_platoon_reaches_intra_platoon_spacing() {
    let s = corridor(105.0, 30.0);
    let p = s.eidm.clone();
    let gaps = settle(s, VehicleClass::Hv, VehicleClass::Cav, 6, 600.0);
    for &(gap, v) in &gaps[1..] {
        let target = p.s0 + v * p.t_intra;
        let exact = desired_gap(v, v, p.t_intra, &p.idm()) / (1.0 - (v / p.desired_speed()).powi(4)).sqrt();
        assert!((gap - target).abs() / target < 0.005, "gap {gap} vs s0 + vT = {target}");
        assert!((gap - exact).abs() / exact < 1e-4, "gap {gap} vs IDM equilibrium {exact}");
    }
    let (gap, v) = gaps[0];
    assert!((gap - (p.s0 + v * p.t_inter)).abs() / gap < 0.005, "first CAV behind an HV keeps T_inter");
}

#[test]
fn human_platoon_keeps_its_time_gap() {
    let s = corridor(30.0, 105.0);
    let s0 = s.hv.s0;
    let gaps = settle(s, VehicleClass::Cav, VehicleClass::Hv, 6, 600.0);
    for (gap, v) in gaps {
        let t = (gap - s0) / v;
        assert!((t - 1.4).abs() <= 0.01, "time gap {t} at v={v}");
    }
}
