//! Car-following acceleration laws.
//!
//! CAVs use the enhanced IDM: plain IDM blended with the constant
//! acceleration heuristic (CAH) through a coolness factor. HVs use IDM with a
//! 1.4 s desired time gap plus a bounded Ornstein-Uhlenbeck acceleration
//! perturbation and a per-driver desired speed.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::scenario::VehicleClass;
use crate::{kmh_to_ms, SIM_STEP};

/// Hard lower bound on any commanded acceleration, m/s².
pub const EMERGENCY_DECEL: f64 = -9.0;

/// Parameters shared by every IDM-family law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmParams {
    /// m/s
    pub desired_speed: f64,
    pub s0: f64,
    pub a_max: f64,
    pub b_comf: f64,
    pub delta: f64,
}

/// E-IDM controller parameters of the CAV fleet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EidmParams {
    /// Desired time gap behind a CAV whose messages are being received, s.
    pub t_intra: f64,
    /// Desired time gap otherwise, s.
    pub t_inter: f64,
    pub s0: f64,
    pub a_max: f64,
    pub b_comf: f64,
    pub coolness: f64,
    pub delta: f64,
    pub desired_speed_kmh: f64,
}

impl Default for EidmParams {
    fn default() -> Self {
        Self {
            t_intra: 0.6,
            t_inter: 1.2,
            s0: 1.0,
            a_max: 2.0,
            b_comf: 2.0,
            coolness: 0.99,
            delta: 4.0,
            desired_speed_kmh: 105.0,
        }
    }
}

impl EidmParams {
    pub fn idm(&self) -> IdmParams {
        IdmParams {
            desired_speed: kmh_to_ms(self.desired_speed_kmh),
            s0: self.s0,
            a_max: self.a_max,
            b_comf: self.b_comf,
            delta: self.delta,
        }
    }

    pub fn desired_speed(&self) -> f64 {
        kmh_to_ms(self.desired_speed_kmh)
    }

    pub(crate) fn check(&self, errors: &mut Vec<(String, String)>) {
        let mut bad = |field: &str, msg: &str| errors.push((format!("eidm.{field}"), msg.into()));
        if !(self.a_max > 0.0) {
            bad("a_max", "must be positive");
        }
        if !(self.b_comf > 0.0) {
            bad("b_comf", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.coolness) {
            bad("coolness", "must lie in [0, 1]");
        }
        if !(self.s0 > 0.0) {
            bad("s0", "must be positive");
        }
        if !(self.t_intra > 0.0 && self.t_intra < self.t_inter) {
            bad("t_intra", "must be positive and below t_inter");
        }
        if !(self.delta > 0.0) {
            bad("delta", "must be positive");
        }
        if !(self.desired_speed_kmh > 0.0) {
            bad("desired_speed_kmh", "must be positive");
        }
    }
}

/// Stochastic human driver model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HvParams {
    pub desired_time_gap: f64,
    pub s0: f64,
    pub a_max: f64,
    pub b_comf: f64,
    pub delta: f64,
    pub desired_speed_mean_kmh: f64,
    pub desired_speed_sd_kmh: f64,
    pub desired_speed_min_kmh: f64,
    pub desired_speed_max_kmh: f64,
    /// Stationary standard deviation of the acceleration perturbation, m/s².
    pub noise_sigma: f64,
    /// Correlation time of the perturbation, s.
    pub noise_tau: f64,
    /// Absolute cap on the perturbation, m/s².
    pub noise_bound: f64,
    /// Perception delay applied to the leader's state, s.
    pub reaction_delay: f64,
}

impl Default for HvParams {
    fn default() -> Self {
        Self {
            desired_time_gap: 1.4,
            s0: 2.0,
            a_max: 1.5,
            b_comf: 2.0,
            delta: 4.0,
            desired_speed_mean_kmh: 120.0,
            desired_speed_sd_kmh: 6.0,
            desired_speed_min_kmh: 105.0,
            desired_speed_max_kmh: 135.0,
            noise_sigma: 0.25,
            noise_tau: 3.0,
            noise_bound: 0.75,
            reaction_delay: 0.0,
        }
    }
}

impl HvParams {
    pub fn idm(&self, desired_speed: f64) -> IdmParams {
        IdmParams {
            desired_speed,
            s0: self.s0,
            a_max: self.a_max,
            b_comf: self.b_comf,
            delta: self.delta,
        }
    }

    /// Draws one driver's desired speed (m/s) from a clamped normal.
    pub fn sample_desired_speed<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        let kmh = (self.desired_speed_mean_kmh + z * self.desired_speed_sd_kmh)
            .clamp(self.desired_speed_min_kmh, self.desired_speed_max_kmh);
        kmh_to_ms(kmh)
    }

    /// Number of whole controller steps covered by the reaction delay.
    pub fn delay_steps(&self) -> usize {
        (self.reaction_delay / SIM_STEP).round() as usize
    }

    pub(crate) fn check(&self, errors: &mut Vec<(String, String)>) {
        let mut bad = |field: &str, msg: &str| errors.push((format!("hv.{field}"), msg.into()));
        if !(self.desired_time_gap > 0.0) {
            bad("desired_time_gap", "must be positive");
        }
        if !(self.s0 > 0.0) {
            bad("s0", "must be positive");
        }
        if !(self.a_max > 0.0) {
            bad("a_max", "must be positive");
        }
        if !(self.b_comf > 0.0) {
            bad("b_comf", "must be positive");
        }
        if !(self.noise_sigma >= 0.0) {
            bad("noise_sigma", "must be non-negative");
        }
        if !(self.noise_bound >= 0.0) {
            bad("noise_bound", "must be non-negative");
        }
        if !(self.noise_tau > 0.0) {
            bad("noise_tau", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.reaction_delay) {
            bad("reaction_delay", "must lie in [0, 1] s");
        }
        if !(self.desired_speed_min_kmh > 0.0
            && self.desired_speed_min_kmh <= self.desired_speed_mean_kmh
            && self.desired_speed_mean_kmh <= self.desired_speed_max_kmh)
        {
            bad("desired_speed_mean_kmh", "must satisfy 0 < min <= mean <= max");
        }
        if !(self.desired_speed_sd_kmh >= 0.0) {
            bad("desired_speed_sd_kmh", "must be non-negative");
        }
    }
}

/// What a follower perceives of its immediate leader.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderView {
    /// Bumper-to-bumper distance, m.
    pub gap: f64,
    pub speed: f64,
    pub accel: f64,
    pub class: VehicleClass,
}

fn ratio_pow(ratio: f64, delta: f64) -> f64 {
    if delta == 4.0 {
        let sq = ratio * ratio;
        sq * sq
    } else {
        ratio.powf(delta)
    }
}

/// Desired dynamic gap s*(v, v_lead); the dynamic part is floored at zero so
/// the result never drops below `s0`.
pub fn desired_gap(v: f64, v_lead: f64, time_gap: f64, p: &IdmParams) -> f64 {
    let dynamic = v * time_gap + v * (v - v_lead) / (2.0 * (p.a_max * p.b_comf).sqrt());
    p.s0 + dynamic.max(0.0)
}

/// IDM acceleration on a free road.
pub fn free_road_accel(v: f64, p: &IdmParams) -> f64 {
    p.a_max * (1.0 - ratio_pow(v / p.desired_speed, p.delta))
}

/// Plain IDM acceleration.
pub fn idm_accel(v: f64, leader: Option<&LeaderView>, time_gap: f64, p: &IdmParams) -> f64 {
    let free = free_road_accel(v, p);
    match leader {
        None => free,
        Some(l) => {
            let z = desired_gap(v, l.speed, time_gap, p) / l.gap;
            free - p.a_max * z * z
        }
    }
}

/// Constant-acceleration heuristic. The leader's acceleration is capped at
/// the subject's own current acceleration, and Θ(0) = 0.
pub fn cah_accel(v: f64, own_accel: f64, leader: &LeaderView) -> f64 {
    let a_eff = leader.accel.min(own_accel);
    let dv = v - leader.speed;
    let s = leader.gap;
    let denom = leader.speed * leader.speed - 2.0 * s * a_eff;
    // a stopped, non-accelerating leader makes the first branch 0/0; the kinematic branch is its limit
    if leader.speed * dv <= -2.0 * s * a_eff && denom > f64::EPSILON {
        v * v * a_eff / denom
    } else {
        let theta = if dv > 0.0 { 1.0 } else { 0.0 };
        a_eff - dv * dv * theta / (2.0 * s)
    }
}

/// Blends an IDM and a CAH acceleration with coolness `c`.
pub fn blend(a_idm: f64, a_cah: f64, b_comf: f64, coolness: f64) -> f64 {
    if a_idm >= a_cah {
        a_idm
    } else {
        (1.0 - coolness) * a_idm + coolness * (a_cah + b_comf * ((a_idm - a_cah) / b_comf).tanh())
    }
}

/// Enhanced IDM acceleration of a CAV, floored at [`EMERGENCY_DECEL`].
pub fn eidm_accel(
    v: f64,
    own_accel: f64,
    leader: Option<&LeaderView>,
    time_gap: f64,
    p: &EidmParams,
) -> f64 {
    let idm = p.idm();
    let a = match leader {
        None => free_road_accel(v, &idm),
        Some(l) => {
            let a_idm = idm_accel(v, Some(l), time_gap, &idm);
            let a_cah = cah_accel(v, own_accel, l);
            blend(a_idm, a_cah, p.b_comf, p.coolness)
        }
    };
    a.max(EMERGENCY_DECEL)
}

/// Temporally correlated, bounded, zero-mean acceleration perturbation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AccelNoise {
    pub value: f64,
}

impl AccelNoise {
    /// Advances the Ornstein-Uhlenbeck state by one controller step.
    pub fn advance<R: Rng + ?Sized>(&mut self, p: &HvParams, rng: &mut R) -> f64 {
        if p.noise_sigma == 0.0 || p.noise_bound == 0.0 {
            self.value = 0.0;
            return 0.0;
        }
        let decay = (-SIM_STEP / p.noise_tau).exp();
        let z: f64 = StandardNormal.sample(rng);
        let next = self.value * decay + p.noise_sigma * (1.0 - decay * decay).sqrt() * z;
        self.value = next.clamp(-p.noise_bound, p.noise_bound);
        self.value
    }
}

/// Human driver acceleration: IDM at the human time gap plus the advanced
/// noise state. With zero noise this is exactly `idm_accel` at T = 1.4 s.
pub fn hv_accel<R: Rng + ?Sized>(
    v: f64,
    leader: Option<&LeaderView>,
    desired_speed: f64,
    p: &HvParams,
    noise: &mut AccelNoise,
    rng: &mut R,
) -> f64 {
    let base = idm_accel(v, leader, p.desired_time_gap, &p.idm(desired_speed));
    let eta = noise.advance(p, rng);
    (base + eta).max(EMERGENCY_DECEL)
}

/// Desired time gap for the subject given its leader and the latest
/// communication outcome with that leader.
pub fn select_dtg(
    subject: VehicleClass,
    leader: Option<&LeaderView>,
    comm_ok: bool,
    eidm: &EidmParams,
    hv: &HvParams,
) -> f64 {
    match subject {
        VehicleClass::Hv => hv.desired_time_gap,
        VehicleClass::Cav => match leader {
            Some(l) if l.class == VehicleClass::Cav && comm_ok => eidm.t_intra,
            _ => eidm.t_inter,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lead(gap: f64, speed: f64, accel: f64) -> LeaderView {
        LeaderView { gap, speed, accel, class: VehicleClass::Cav }
    }

    #[test]
    fn desired_gap_hand_values() {
        let p = EidmParams::default().idm();
        assert_eq!(desired_gap(0.0, 0.0, 0.6, &p), 1.0);
        let v = 29.1667;
        assert!((desired_gap(v, v, 0.6, &p) - (1.0 + v * 0.6)).abs() < 1e-12);
        assert!((desired_gap(v, v, 0.6, &p) - 18.5).abs() < 1e-3);
        // 12 - 25 < 0 clamps to s0
        assert_eq!(desired_gap(20.0, 25.0, 0.6, &p), 1.0);
    }

    #[test]
    fn idm_hand_values() {
        let p = EidmParams::default().idm();
        assert!(idm_accel(p.desired_speed, None, 0.6, &p).abs() < 1e-12);
        assert_eq!(idm_accel(0.0, None, 0.6, &p), 2.0);
        let a = idm_accel(20.0, Some(&lead(13.0, 20.0, 0.0)), 0.6, &p);
        assert!((a - (-0.4422)).abs() < 1e-3, "{a}");
    }

    #[test]
    fn cah_branches() {
        // first branch
        let a = cah_accel(20.0, 0.0, &lead(20.0, 20.0, -2.0));
        assert!((a - (-400.0 * 2.0 / 480.0)).abs() < 1e-12);
        assert!((a - (-1.6667)).abs() < 1e-4);
        // second branch with closing speed
        let a = cah_accel(25.0, 0.0, &lead(30.0, 10.0, 1.0));
        assert!((a - (-3.75)).abs() < 1e-12);
        // Δv = 0 and leader accel above own: returns own accel
        let a = cah_accel(15.0, 0.7, &lead(25.0, 15.0, 1.2));
        assert!((a - 0.7).abs() < 1e-12);
    }

    #[test]
    fn cah_both_at_rest_is_finite() {
        let a = cah_accel(0.0, 0.0, &lead(1.0, 0.0, 0.0));
        assert_eq!(a, 0.0);
    }

    #[test]
    fn cah_stopped_leader_requires_kinematic_stop() {
        let a = cah_accel(20.0, 0.5, &lead(25.0, 0.0, 0.0));
        assert!((a + 20.0 * 20.0 / 50.0).abs() < 1e-12);
    }

    #[test]
    fn blend_hand_values() {
        assert_eq!(blend(-1.3, -1.3, 2.0, 0.99), -1.3);
        let a = blend(-8.0, -2.0, 2.0, 0.99);
        let expect = 0.01 * -8.0 + 0.99 * (-2.0 + 2.0 * (-3.0f64).tanh());
        assert!((a - expect).abs() < 1e-12);
        assert!((a - (-4.0302)).abs() < 1e-3, "{a}");
    }

    #[test]
    fn eidm_free_flow() {
        let p = EidmParams::default();
        assert!(eidm_accel(p.desired_speed(), 0.0, None, 0.6, &p).abs() < 1e-12);
        assert_eq!(eidm_accel(0.0, 0.0, None, 0.6, &p), 2.0);
    }

    #[test]
    fn eidm_floor() {
        let p = EidmParams::default();
        let a = eidm_accel(30.0, -9.0, Some(&lead(0.5, 0.0, -9.0)), 1.2, &p);
        assert_eq!(a, EMERGENCY_DECEL);
    }

    #[test]
    fn dtg_selection() {
        let e = EidmParams::default();
        let h = HvParams::default();
        let cav = lead(20.0, 20.0, 0.0);
        let hv = LeaderView { class: VehicleClass::Hv, ..cav };
        assert_eq!(select_dtg(VehicleClass::Cav, Some(&cav), true, &e, &h), 0.6);
        assert_eq!(select_dtg(VehicleClass::Cav, Some(&cav), false, &e, &h), 1.2);
        assert_eq!(select_dtg(VehicleClass::Cav, Some(&hv), true, &e, &h), 1.2);
        assert_eq!(select_dtg(VehicleClass::Cav, None, true, &e, &h), 1.2);
        for comm in [true, false] {
            assert_eq!(select_dtg(VehicleClass::Hv, Some(&cav), comm, &e, &h), 1.4);
            assert_eq!(select_dtg(VehicleClass::Hv, None, comm, &e, &h), 1.4);
        }
    }

    #[test]
    fn hv_noise_off_matches_idm() {
        let p = HvParams { noise_sigma: 0.0, ..HvParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut noise = AccelNoise::default();
        let v0 = 33.0;
        assert_eq!(hv_accel(v0, None, v0, &p, &mut noise, &mut rng), 0.0);
        let l = lead(25.0, 18.0, 0.0);
        let a = hv_accel(20.0, Some(&l), v0, &p, &mut noise, &mut rng);
        assert_eq!(a, idm_accel(20.0, Some(&l), 1.4, &p.idm(v0)));
    }

    #[test]
    fn hv_deterministic_per_seed() {
        let p = HvParams::default();
        let l = lead(30.0, 20.0, 0.0);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut noise = AccelNoise::default();
            (0..50).map(|_| hv_accel(22.0, Some(&l), 33.0, &p, &mut noise, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn noise_is_bounded_and_centred() {
        let p = HvParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut noise = AccelNoise::default();
        let n = 200_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let x = noise.advance(&p, &mut rng);
            assert!(x.abs() <= p.noise_bound);
            sum += x;
        }
        assert!((sum / n as f64).abs() < 0.02);
    }
}
