//! The 10 Hz simulation loop.
//!
//! Each step runs, in order: communication update (every fifth step),
//! accelerations from the frozen state, lane changes with a serial
//! upstream-first commit, ballistic kinematics, detector crossings, then exits
//! and spawns. Three independent ChaCha streams drive arrivals, driver noise
//! and message delivery.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::comm::{update_comm, CommCoefficients, CommPair, CommSnapshot};
use crate::lateral::{
    discretionary_lane_change, mandatory_merge, safe_insertion, Agent, LaneDecision, LanePolicy, LaneView,
    Surroundings,
};
use crate::longitudinal::{eidm_accel, hv_accel, idm_accel, select_dtg, AccelNoise, LeaderView};
use crate::scenario::{
    CommMode, Destination, Origin, Policy, ValidatedScenario, VehicleClass, VehicleId, VehicleState,
};
use crate::{kmh_to_ms, SIM_STEP};

/// Steps per aggregation interval (5 min).
pub const BIN_STEPS: u64 = 3000;

/// Steps between communication updates.
/// Each vehicle weighs a discretionary change once per this many steps.
pub const MOBIL_STEPS: u64 = 5;

pub const COMM_STEPS: u64 = 5;

/// One vehicle crossing one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorRecord {
    pub detector: usize,
    pub lane: u8,
    pub vehicle: VehicleId,
    pub class: VehicleClass,
    /// Crossing time interpolated within the step, s.
    pub time: f64,
    pub speed: f64,
    pub accel: f64,
    /// Time since the previous crossing of the same detector and lane.
    pub headway: Option<f64>,
}

/// Ledger entry of one vehicle that entered the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub origin: Origin,
    pub destination: Destination,
    /// Missed its off-ramp and continued to the mainline end.
    pub rerouted: bool,
    pub arrival_time: f64,
    pub entry_time: f64,
    pub exit_time: Option<f64>,
    pub distance: f64,
    pub desired_speed: f64,
}

/// Aggregates of one communication update inside the measured window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommRecord {
    pub time: f64,
    pub cavs: usize,
    pub mean_density: f64,
    pub max_density: f64,
    pub pairs: usize,
    pub mean_reception: Option<f64>,
    pub success_rate: Option<f64>,
    pub xi_cap_hits: u64,
    pub p_clamp_hits: u64,
}

/// Network accumulators over one 5-minute interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiRecord {
    pub interval_start: f64,
    pub interval_end: f64,
    pub exited: u64,
    pub present: u64,
    pub latent: u64,
    /// Vehicle-kilometres travelled.
    pub vkt: f64,
    /// Vehicle-hours travelled.
    pub vht: f64,
    /// Delay against each vehicle's desired speed, vehicle-seconds.
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: Policy,
    pub mpr: f64,
    pub seed: u64,
    pub steps: u64,
    pub spawned: u64,
    pub entered: u64,
    pub exited: u64,
    pub present: u64,
    pub latent: u64,
    pub missed_exits: u64,
    pub lane_changes: u64,
    /// Smallest bumper gap seen between consecutive vehicles, m.
    pub min_gap: f64,
    pub ineligible: u64,
    pub comm_updates: u64,
    pub xi_cap_hits: u64,
    pub p_clamp_hits: u64,
    pub result_hash: String,
}

/// Everything one replication produces; warm-up is already excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct RawResults {
    pub summary: RunSummary,
    pub detectors: Vec<DetectorRecord>,
    pub vehicles: Vec<VehicleRecord>,
    pub comm: Vec<CommRecord>,
    pub kpi: Vec<KpiRecord>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("integrity violation at t={time:.1}s: {message}")]
    Integrity { time: f64, message: String },
    #[error("cannot place vehicle: {0}")]
    Placement(String),
}

#[derive(Debug, Clone)]
struct Vehicle {
    s: VehicleState,
    noise: AccelNoise,
    next_accel: f64,
    last_change: f64,
    /// Acceleration lane the vehicle is on while in lane 0.
    ramp: Option<usize>,
    exit_point: Option<f64>,
    arrival_time: f64,
    entry_position: f64,
    rerouted: bool,
    /// Past (position, speed, accel), newest last; kept only with a
    /// reaction delay.
    history: VecDeque<(f64, f64, f64)>,
}

impl Vehicle {
    fn agent(&self) -> Agent {
        Agent {
            id: self.s.id,
            class: self.s.class,
            position: self.s.position,
            speed: self.s.speed,
            accel: self.s.accel,
            length: self.s.length,
            desired_speed: self.s.desired_speed,
        }
    }

    fn record(&self, exit_time: Option<f64>) -> VehicleRecord {
        VehicleRecord {
            id: self.s.id,
            class: self.s.class,
            origin: self.s.origin,
            destination: self.s.destination,
            rerouted: self.rerouted,
            arrival_time: self.arrival_time,
            entry_time: self.s.entry_time,
            exit_time,
            distance: self.s.position - self.entry_position,
            desired_speed: self.s.desired_speed,
        }
    }
}

#[derive(Debug, Clone)]
struct Pending {
    id: VehicleId,
    class: VehicleClass,
    origin: Origin,
    destination: Destination,
    desired_speed: f64,
    arrival_time: f64,
}

#[derive(Debug, Clone)]
struct OriginDemand {
    origin: Origin,
    poisson: Option<Poisson<f64>>,
    destinations: Vec<(Destination, f64)>,
}

#[derive(Debug, Clone, Default)]
struct Bin {
    exited: u64,
    vkt: f64,
    vht: f64,
    delay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Move {
    Discretionary,
    Exit,
    Merge,
}

/// Poisson arrival count of one step at `rate_vph`.
pub fn arrivals<R: Rng + ?Sized>(rate_vph: f64, rng: &mut R) -> u32 {
    if rate_vph <= 0.0 {
        return 0;
    }
    Poisson::new(rate_vph * SIM_STEP / 3600.0).expect("positive rate").sample(rng) as u32
}

/// Derives the three independent generator streams of one replication.
pub fn streams(seed: u64) -> [ChaCha8Rng; 3] {
    std::array::from_fn(|k| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(k as u64 + 1);
        r
    })
}

/// State of one replication.
pub struct World {
    scn: ValidatedScenario,
    seed: u64,
    step: u64,
    warmup_steps: u64,
    lanes: Vec<Vec<Vehicle>>,
    policy: LanePolicy,
    coeffs: CommCoefficients,
    comm: CommSnapshot,
    spawn_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    comm_rng: ChaCha8Rng,
    demand: Vec<OriginDemand>,
    mainline_queues: Vec<VecDeque<Pending>>,
    ramp_queues: Vec<VecDeque<Pending>>,
    next_id: VehicleId,
    last_crossing: Vec<Vec<Option<f64>>>,
    bin: Bin,
    detectors: Vec<DetectorRecord>,
    ledger: Vec<VehicleRecord>,
    comm_log: Vec<CommRecord>,
    kpi: Vec<KpiRecord>,
    spawned: u64,
    entered: u64,
    exited: u64,
    missed_exits: u64,
    lane_changes: u64,
    min_gap: f64,
    ineligible: u64,
    comm_updates: u64,
    xi_cap_hits: u64,
    p_clamp_hits: u64,
}

impl World {
    pub fn new(scn: &ValidatedScenario) -> Self {
        Self::with_seed(scn, scn.config.seed)
    }

    pub fn with_seed(scn: &ValidatedScenario, seed: u64) -> Self {
        let net = &scn.network;
        let [spawn_rng, noise_rng, comm_rng] = streams(seed);
        let demand = scn
            .demand
            .origins()
            .into_iter()
            .map(|origin| {
                let destinations: Vec<(Destination, f64)> = scn
                    .demand
                    .flows
                    .iter()
                    .filter(|f| f.origin == origin && f.rate_vph > 0.0)
                    .map(|f| (f.destination, f.rate_vph))
                    .collect();
                let rate: f64 = destinations.iter().map(|d| d.1).sum();
                let poisson = (rate > 0.0).then(|| Poisson::new(rate * SIM_STEP / 3600.0).expect("positive rate"));
                OriginDemand { origin, poisson, destinations }
            })
            .collect();
        let n = net.lane_count as usize;
        Self {
            seed,
            step: 0,
            warmup_steps: (scn.config.warmup_duration / SIM_STEP).round() as u64,
            lanes: vec![Vec::new(); n + 1],
            policy: LanePolicy::new(scn.config.policy, net.lane_count),
            coeffs: CommCoefficients::builtin(),
            comm: CommSnapshot::default(),
            spawn_rng,
            noise_rng,
            comm_rng,
            demand,
            mainline_queues: vec![VecDeque::new(); n],
            ramp_queues: vec![VecDeque::new(); net.interchanges.len()],
            next_id: 1,
            last_crossing: vec![vec![None; n + 1]; net.detector_positions.len()],
            bin: Bin::default(),
            detectors: Vec::new(),
            ledger: Vec::new(),
            comm_log: Vec::new(),
            kpi: Vec::new(),
            spawned: 0,
            entered: 0,
            exited: 0,
            missed_exits: 0,
            lane_changes: 0,
            min_gap: f64::INFINITY,
            ineligible: 0,
            comm_updates: 0,
            xi_cap_hits: 0,
            p_clamp_hits: 0,
            scn: scn.clone(),
        }
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * SIM_STEP
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn scenario(&self) -> &ValidatedScenario {
        &self.scn
    }

    pub fn comm_snapshot(&self) -> &CommSnapshot {
        &self.comm
    }

    /// Vehicles on the road, lane by lane from the acceleration lanes up,
    /// upstream first within a lane.
    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        self.lanes.iter().flatten().map(|v| &v.s)
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleState> {
        self.vehicles().find(|v| v.id == id)
    }

    pub fn present(&self) -> u64 {
        self.lanes.iter().map(|l| l.len() as u64).sum()
    }

    pub fn latent(&self) -> u64 {
        self.mainline_queues.iter().chain(&self.ramp_queues).map(|q| q.len() as u64).sum()
    }

    pub fn spawned(&self) -> u64 {
        self.spawned
    }

    pub fn exited(&self) -> u64 {
        self.exited
    }

    pub fn lane_changes(&self) -> u64 {
        self.lane_changes
    }

    pub fn min_gap(&self) -> f64 {
        self.min_gap
    }

    pub fn detector_records(&self) -> &[DetectorRecord] {
        &self.detectors
    }

    fn measuring(&self) -> bool {
        self.step >= self.warmup_steps
    }

    /// Puts a vehicle on a mainline lane, for fixtures. Placed vehicles count
    /// as spawned and entered.
    pub fn place_vehicle(
        &mut self,
        class: VehicleClass,
        lane: u8,
        position: f64,
        speed: f64,
    ) -> Result<VehicleId, EngineError> {
        if lane == 0 || lane as usize >= self.lanes.len() {
            return Err(EngineError::Placement(format!("lane {lane} is not a mainline lane")));
        }
        if !self.policy.allows(class, lane).unwrap_or(false) {
            return Err(EngineError::Placement(format!("{class} not allowed in lane {lane}")));
        }
        let desired = match class {
            VehicleClass::Cav => self.scn.eidm.desired_speed(),
            VehicleClass::Hv => kmh_to_ms(self.scn.hv.desired_speed_mean_kmh),
        };
        let id = self.next_id;
        self.next_id += 1;
        let p = Pending {
            id,
            class,
            origin: Origin::Mainline,
            destination: Destination::MainlineEnd,
            desired_speed: desired,
            arrival_time: self.time(),
        };
        let v = self.make_vehicle(p, lane, position, speed, None);
        let lane_vec = &mut self.lanes[lane as usize];
        let idx = lane_vec.partition_point(|o| o.s.position < position);
        let clash = lane_vec.get(idx).is_some_and(|o| o.s.rear() <= position)
            || idx.checked_sub(1).is_some_and(|k| lane_vec[k].s.position >= v.s.rear());
        if clash {
            return Err(EngineError::Placement(format!("overlap at {position} m in lane {lane}")));
        }
        lane_vec.insert(idx, v);
        self.spawned += 1;
        self.entered += 1;
        Ok(id)
    }

    fn make_vehicle(&self, p: Pending, lane: u8, position: f64, speed: f64, ramp: Option<usize>) -> Vehicle {
        let length = self.scn.network.vehicle_length;
        let exit_point = match p.destination {
            Destination::OffRamp(k) => Some(self.scn.network.interchanges[k].exit_point()),
            Destination::MainlineEnd => None,
        };
        let dtg = match p.class {
            VehicleClass::Cav => self.scn.eidm.t_inter,
            VehicleClass::Hv => self.scn.hv.desired_time_gap,
        };
        Vehicle {
            s: VehicleState {
                id: p.id,
                class: p.class,
                lane,
                position,
                speed,
                accel: 0.0,
                length,
                dtg_active: dtg,
                origin: p.origin,
                destination: p.destination,
                entry_time: self.time(),
                desired_speed: p.desired_speed,
            },
            noise: AccelNoise::default(),
            next_accel: 0.0,
            last_change: f64::NEG_INFINITY,
            ramp,
            exit_point,
            arrival_time: p.arrival_time,
            entry_position: position,
            rerouted: false,
            history: VecDeque::new(),
        }
    }

    fn comm_ok(&self, follower: VehicleId, leader: Option<(VehicleId, VehicleClass)>) -> bool {
        match leader {
            Some((id, VehicleClass::Cav)) => match self.scn.config.comm_mode {
                CommMode::AlwaysOn => true,
                CommMode::AlwaysOff => false,
                CommMode::Model => match self.comm.pairs.get(&follower) {
                    Some(o) if o.leader == id => o.success,
                    _ => true,
                },
            },
            _ => false,
        }
    }

    fn accel_lane_end(&self, ramp: Option<usize>) -> f64 {
        ramp.map_or(f64::INFINITY, |k| self.scn.network.interchanges[k].accel_lane_end())
    }

    /// Leader view of vehicle `i` in `lane`, with the leader's id when it is
    /// a vehicle rather than the end of an acceleration lane.
    fn leader_of(&self, lane: usize, i: usize) -> Option<(LeaderView, Option<(VehicleId, VehicleClass)>)> {
        let me = &self.lanes[lane][i];
        let next = self.lanes[lane].get(i + 1).filter(|n| lane != 0 || n.ramp == me.ramp);
        let delay = if me.s.class == VehicleClass::Hv { self.scn.hv.delay_steps() } else { 0 };
        let from_vehicle = next.map(|l| {
            let (pos, speed, accel) = if delay > 0 && l.history.len() >= delay {
                l.history[l.history.len() - delay]
            } else {
                (l.s.position, l.s.speed, l.s.accel)
            };
            let view = LeaderView {
                gap: (pos - l.s.length - me.s.position).max(1e-3),
                speed,
                accel,
                class: l.s.class,
            };
            (view, Some((l.s.id, l.s.class)))
        });
        if lane != 0 {
            return from_vehicle;
        }
        let end = self.accel_lane_end(me.ramp);
        let wall_gap = (end - me.s.position).max(1e-3);
        let s0 = match me.s.class {
            VehicleClass::Cav => self.scn.eidm.s0,
            VehicleClass::Hv => self.scn.hv.s0,
        };
        let b = self.scn.lane_change.safe_decel;
        let v = me.s.speed;
        if wall_gap > s0 + v + v * v / (2.0 * b) {
            return from_vehicle;
        }
        match from_vehicle {
            Some((v, id)) if v.gap <= wall_gap => Some((v, id)),
            _ => Some((LeaderView { gap: wall_gap, speed: 0.0, accel: 0.0, class: VehicleClass::Hv }, None)),
        }
    }

    fn law(&self, f: &Agent, l: Option<&Agent>) -> f64 {
        let view = l.map(|l| LeaderView {
            gap: (l.rear() - f.position).max(1e-3),
            speed: l.speed,
            accel: l.accel,
            class: l.class,
        });
        match f.class {
            VehicleClass::Cav => {
                let ok = self.comm_ok(f.id, l.map(|l| (l.id, l.class)));
                let t = select_dtg(VehicleClass::Cav, view.as_ref(), ok, &self.scn.eidm, &self.scn.hv);
                eidm_accel(f.speed, f.accel, view.as_ref(), t, &self.scn.eidm)
            }
            VehicleClass::Hv => {
                idm_accel(f.speed, view.as_ref(), self.scn.hv.desired_time_gap, &self.scn.hv.idm(f.desired_speed))
            }
        }
    }

    /// Advances the world by one controller step.
    pub fn step(&mut self) -> Result<(), EngineError> {
        if self.step % COMM_STEPS == 0 {
            self.update_comm();
        }
        self.compute_accels();
        self.change_lanes()?;
        self.move_vehicles();
        self.step += 1;
        self.check_integrity()?;
        self.exits();
        self.spawn();
        if self.step > self.warmup_steps && (self.step - self.warmup_steps) % BIN_STEPS == 0 {
            self.close_bin();
        }
        let balance = self.present() + self.exited + self.latent();
        if balance != self.spawned {
            return Err(self.integrity(format!(
                "conservation broken: spawned {} != present {} + exited {} + latent {}",
                self.spawned,
                self.present(),
                self.exited,
                self.latent()
            )));
        }
        Ok(())
    }

    fn integrity(&self, message: String) -> EngineError {
        EngineError::Integrity { time: self.time(), message }
    }

    fn update_comm(&mut self) {
        let mut pairs = Vec::new();
        for (lane, vs) in self.lanes.iter().enumerate() {
            for w in vs.windows(2) {
                let (f, l) = (&w[0], &w[1]);
                if f.s.class == VehicleClass::Cav
                    && l.s.class == VehicleClass::Cav
                    && (lane != 0 || f.ramp == l.ramp)
                {
                    pairs.push(CommPair { follower: f.s.id, leader: l.s.id, distance: l.s.position - f.s.position });
                }
            }
        }
        let states: Vec<VehicleState> = self.lanes.iter().flatten().map(|v| v.s.clone()).collect();
        let snap = update_comm(
            &states,
            &pairs,
            self.time(),
            &self.scn.comm,
            &self.coeffs,
            self.scn.config.comm_mode,
            &mut self.comm_rng,
        );
        if self.measuring() && !snap.density.is_empty() {
            let n = snap.density.len();
            let (sum, max) = snap.density.values().fold((0.0, 0.0f64), |(s, m), &(d, _)| (s + d, m.max(d)));
            self.comm_log.push(CommRecord {
                time: snap.time,
                cavs: n,
                mean_density: sum / n as f64,
                max_density: max,
                pairs: snap.pairs.len(),
                mean_reception: snap.mean_reception(),
                success_rate: snap.success_rate(),
                xi_cap_hits: snap.xi_cap_hits,
                p_clamp_hits: snap.p_clamp_hits,
            });
            self.comm_updates += 1;
            self.xi_cap_hits += snap.xi_cap_hits;
            self.p_clamp_hits += snap.p_clamp_hits;
        }
        self.comm = snap;
    }

    fn compute_accels(&mut self) {
        for lane in 0..self.lanes.len() {
            let n = self.lanes[lane].len();
            let mut views = Vec::with_capacity(n);
            for i in 0..n {
                let me = &self.lanes[lane][i];
                let leader = self.leader_of(lane, i);
                let dtg = select_dtg(
                    me.s.class,
                    leader.as_ref().map(|l| &l.0),
                    self.comm_ok(me.s.id, leader.and_then(|l| l.1)),
                    &self.scn.eidm,
                    &self.scn.hv,
                );
                views.push((leader.map(|l| l.0), dtg));
            }
            let hv = self.scn.hv;
            let eidm = self.scn.eidm;
            for (v, (view, dtg)) in self.lanes[lane].iter_mut().zip(views) {
                v.s.dtg_active = dtg;
                v.next_accel = match v.s.class {
                    VehicleClass::Cav => eidm_accel(v.s.speed, v.s.accel, view.as_ref(), dtg, &eidm),
                    VehicleClass::Hv => {
                        hv_accel(v.s.speed, view.as_ref(), v.s.desired_speed, &hv, &mut v.noise, &mut self.noise_rng)
                    }
                };
            }
        }
        self.cooperate();
    }

    /// Vehicles bound to change lanes (ramp mergers, exit-bound vehicles in
    /// the exit zone) settle behind the target-lane leader, and the
    /// target-lane follower brakes to open a gap. Both brake no harder than
    /// comfortable.
    fn cooperate(&mut self) {
        let lookahead = self.scn.lane_change.exit_lookahead;
        let mut adjust: Vec<(usize, usize, f64)> = Vec::new();
        for lane in 0..self.lanes.len() {
            for i in 0..self.lanes[lane].len() {
                let v = &self.lanes[lane][i];
                let pending = if lane == 0 {
                    v.ramp.is_some()
                } else {
                    lane > 1 && v.exit_point.is_some_and(|e| e > v.s.position && e - v.s.position <= lookahead)
                };
                if !pending {
                    continue;
                }
                let me = v.agent();
                let target = if lane == 0 { 1 } else { lane - 1 };
                let view = self.lane_view(target, me.position, me.id);
                if let Some(lead) = &view.lead {
                    let a = self.law(&me, Some(lead)).max(-self.b_comf(me.class));
                    adjust.push((lane, i, a));
                }
                if let Some(lag) = &view.lag {
                    if me.rear() > lag.position {
                        let a = self.law(lag, Some(&me)).max(-self.b_comf(lag.class));
                        let vs = &self.lanes[target];
                        let j = vs.partition_point(|o| o.s.position < lag.position);
                        if let Some(k) = vs[j..].iter().position(|o| o.s.id == lag.id) {
                            adjust.push((target, j + k, a));
                        }
                    }
                }
            }
        }
        for (lane, i, a) in adjust {
            let v = &mut self.lanes[lane][i];
            v.next_accel = v.next_accel.min(a);
        }
    }

    fn b_comf(&self, class: VehicleClass) -> f64 {
        match class {
            VehicleClass::Cav => self.scn.eidm.b_comf,
            VehicleClass::Hv => self.scn.hv.b_comf,
        }
    }

    /// Lead and lag around `pos` in `lane`, skipping `skip`.
    fn lane_view(&self, lane: usize, pos: f64, skip: VehicleId) -> LaneView {
        let vs = &self.lanes[lane];
        let idx = vs.partition_point(|o| o.s.position <= pos);
        let lead = vs[idx..].iter().find(|o| o.s.id != skip).map(Vehicle::agent);
        let lag = vs[..idx].iter().rev().find(|o| o.s.id != skip).map(Vehicle::agent);
        LaneView { lead, lag }
    }

    fn decide(&self, lane: usize, i: usize, t: f64) -> Option<(u8, Move)> {
        let v = &self.lanes[lane][i];
        let me = v.agent();
        let p = &self.scn.lane_change;
        let law = |f: &Agent, l: Option<&Agent>| self.law(f, l);
        if lane == 0 {
            let ic = &self.scn.network.interchanges[v.ramp?];
            let target = self.lane_view(1, me.position, me.id);
            let remaining = ic.accel_lane_end() - me.position;
            return mandatory_merge(&me, &target, remaining, ic.accel_lane_length, p, law).then_some((1, Move::Merge));
        }
        if let Some(e) = v.exit_point {
            let to_exit = e - me.position;
            if to_exit > 0.0 && to_exit <= p.exit_lookahead {
                if lane == 1 || t - v.last_change < p.mandatory_cooldown {
                    return None;
                }
                let target = self.lane_view(lane - 1, me.position, me.id);
                return mandatory_merge(&me, &target, to_exit, p.exit_lookahead, p, law)
                    .then_some((lane as u8 - 1, Move::Exit));
            }
        }
        if (self.step + v.s.id) % MOBIL_STEPS != 0 {
            return None;
        }
        let n = self.lanes.len() - 1;
        let exit_bound = v.exit_point.is_some_and(|e| e - me.position <= 2.0 * p.exit_lookahead);
        let around = Surroundings {
            lane: lane as u8,
            current: LaneView {
                lead: self.lanes[lane].get(i + 1).map(Vehicle::agent),
                lag: i.checked_sub(1).map(|k| self.lanes[lane][k].agent()),
            },
            left: (lane < n && !exit_bound).then(|| self.lane_view(lane + 1, me.position, me.id)),
            right: (lane > 1).then(|| self.lane_view(lane - 1, me.position, me.id)),
        };
        match discretionary_lane_change(&me, &around, t - v.last_change, p, self.policy, law) {
            LaneDecision::Stay => None,
            LaneDecision::Left => Some((lane as u8 + 1, Move::Discretionary)),
            LaneDecision::Right => Some((lane as u8 - 1, Move::Discretionary)),
        }
    }

    fn change_lanes(&mut self) -> Result<(), EngineError> {
        let t = self.time();
        let mut cands: Vec<(f64, VehicleId, usize, u8, Move)> = Vec::new();
        for lane in 0..self.lanes.len() {
            for i in 0..self.lanes[lane].len() {
                if let Some((to, kind)) = self.decide(lane, i, t) {
                    let v = &self.lanes[lane][i];
                    cands.push((v.s.position, v.s.id, lane, to, kind));
                }
            }
        }
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let p = self.scn.lane_change;
        for (pos, id, from, to, kind) in cands {
            let idx = {
                let vs = &self.lanes[from];
                let start = vs.partition_point(|o| o.s.position < pos);
                match vs[start..].iter().position(|o| o.s.id == id) {
                    Some(k) => start + k,
                    None => continue,
                }
            };
            let v = &self.lanes[from][idx];
            let me = v.agent();
            let target = self.lane_view(to as usize, me.position, id);
            let limit = match kind {
                Move::Discretionary => p.safe_decel,
                Move::Exit => p.mandatory_decel(v.exit_point.unwrap_or(pos) - pos, p.exit_lookahead),
                Move::Merge => {
                    let ic = &self.scn.network.interchanges[v.ramp.expect("lane 0 vehicle has a ramp")];
                    p.mandatory_decel(ic.accel_lane_end() - pos, ic.accel_lane_length)
                }
            };
            let law = |f: &Agent, l: Option<&Agent>| self.law(f, l);
            if !safe_insertion(&me, &target, limit, p.min_gap, &law) {
                continue;
            }
            let own = self.law(&me, target.lead.as_ref());
            let mut v = self.lanes[from].remove(idx);
            v.s.lane = to;
            v.last_change = t;
            v.ramp = None;
            v.next_accel = match v.s.class {
                VehicleClass::Cav => own,
                VehicleClass::Hv => (own + v.noise.value).max(crate::longitudinal::EMERGENCY_DECEL),
            };
            if !self.policy.allows(v.s.class, to).unwrap_or(false) {
                self.ineligible += 1;
                return Err(self.integrity(format!("vehicle {id} moved into ineligible lane {to}")));
            }
            let dst = &mut self.lanes[to as usize];
            let at = dst.partition_point(|o| o.s.position < pos);
            dst.insert(at, v);
            self.lane_changes += 1;
        }
        Ok(())
    }

    fn move_vehicles(&mut self) {
        let dt = SIM_STEP;
        let t0 = self.time();
        let measuring = self.measuring();
        let detectors = &self.scn.network.detector_positions;
        let keep = self.scn.hv.delay_steps();
        for (lane, vs) in self.lanes.iter_mut().enumerate() {
            for v in vs.iter_mut() {
                let (x0, v0) = (v.s.position, v.s.speed);
                let a = v.next_accel;
                let (dx, v1) = if v0 + a * dt >= 0.0 {
                    (v0 * dt + 0.5 * a * dt * dt, v0 + a * dt)
                } else {
                    (-v0 * v0 / (2.0 * a), 0.0)
                };
                v.s.position = x0 + dx;
                v.s.speed = v1;
                v.s.accel = a;
                if keep > 0 {
                    v.history.push_back((v.s.position, v1, a));
                    while v.history.len() > keep {
                        v.history.pop_front();
                    }
                }
                if measuring {
                    self.bin.vkt += dx / 1000.0;
                    self.bin.vht += dt / 3600.0;
                    self.bin.delay += dt - dx / v.s.desired_speed;
                }
                if lane == 0 || dx <= 0.0 {
                    continue;
                }
                for (d, &xd) in detectors.iter().enumerate() {
                    if x0 < xd && xd <= x0 + dx {
                        let tau = crossing_fraction(x0, v0, a, xd, dx) * dt;
                        let time = t0 + tau;
                        let last = &mut self.last_crossing[d][lane];
                        let headway = last.map(|p| time - p);
                        *last = Some(time);
                        if measuring {
                            self.detectors.push(DetectorRecord {
                                detector: d,
                                lane: lane as u8,
                                vehicle: v.s.id,
                                class: v.s.class,
                                time,
                                speed: (v0 + a * tau).max(0.0),
                                accel: a,
                                headway,
                            });
                        }
                    }
                }
            }
        }
    }

    fn check_integrity(&mut self) -> Result<(), EngineError> {
        for (lane, vs) in self.lanes.iter().enumerate() {
            for v in vs {
                if !(v.s.position.is_finite() && v.s.speed.is_finite() && v.s.accel.is_finite()) {
                    return Err(self.integrity(format!("non-finite state of vehicle {}", v.s.id)));
                }
                if v.s.speed < 0.0 {
                    return Err(self.integrity(format!("negative speed of vehicle {}", v.s.id)));
                }
            }
            for w in vs.windows(2) {
                if lane == 0 && w[0].ramp != w[1].ramp {
                    continue;
                }
                let gap = w[1].s.rear() - w[0].s.position;
                if gap < self.min_gap {
                    self.min_gap = gap;
                }
                if gap <= 0.0 {
                    return Err(self.integrity(format!(
                        "overlap in lane {lane}: vehicle {} at {:.3} m behind {} at {:.3} m (gap {gap:.4} m)",
                        w[0].s.id, w[0].s.position, w[1].s.id, w[1].s.position
                    )));
                }
            }
        }
        Ok(())
    }

    fn exits(&mut self) {
        let t = self.time();
        let end = self.scn.network.mainline_length;
        let measuring = self.measuring();
        for lane in 0..self.lanes.len() {
            let mut k = 0;
            while k < self.lanes[lane].len() {
                let v = &mut self.lanes[lane][k];
                if let Some(e) = v.exit_point {
                    if lane != 1 && v.s.position > e {
                        v.exit_point = None;
                        v.s.destination = Destination::MainlineEnd;
                        v.rerouted = true;
                        self.missed_exits += 1;
                    }
                }
                let leaving = v.s.position >= end || (lane == 1 && v.exit_point.is_some_and(|e| v.s.position >= e));
                if leaving {
                    let v = self.lanes[lane].remove(k);
                    self.ledger.push(v.record(Some(t)));
                    self.exited += 1;
                    if measuring {
                        self.bin.exited += 1;
                    }
                } else {
                    k += 1;
                }
            }
        }
    }

    fn spawn(&mut self) {
        let t = self.time();
        let mpr = self.scn.config.mpr;
        for o in 0..self.demand.len() {
            let Some(poisson) = self.demand[o].poisson else { continue };
            let count = poisson.sample(&mut self.spawn_rng) as u32;
            for _ in 0..count {
                let od = &self.demand[o];
                let total: f64 = od.destinations.iter().map(|d| d.1).sum();
                let mut u = self.spawn_rng.random::<f64>() * total;
                let mut destination = od.destinations[od.destinations.len() - 1].0;
                for &(d, w) in &od.destinations {
                    if u < w {
                        destination = d;
                        break;
                    }
                    u -= w;
                }
                let class = if self.spawn_rng.random::<f64>() < mpr { VehicleClass::Cav } else { VehicleClass::Hv };
                let desired_speed = match class {
                    VehicleClass::Cav => self.scn.eidm.desired_speed(),
                    VehicleClass::Hv => self.scn.hv.sample_desired_speed(&mut self.spawn_rng),
                };
                let origin = od.origin;
                let p = Pending { id: self.next_id, class, origin, destination, desired_speed, arrival_time: t };
                self.next_id += 1;
                self.spawned += 1;
                match origin {
                    Origin::Mainline => {
                        let lanes = self.policy.eligible_lanes(class);
                        let lane = lanes[self.spawn_rng.random_range(0..lanes.len())];
                        self.mainline_queues[lane as usize - 1].push_back(p);
                    }
                    Origin::OnRamp(k) => self.ramp_queues[k].push_back(p),
                }
            }
        }
        for q in 0..self.mainline_queues.len() {
            let lane = q + 1;
            if let Some(head) = self.mainline_queues[q].front() {
                let leader = self.lanes[lane].first().map(|l| (l.s.rear(), l.s.speed, l.s.accel, l.s.class));
                if let Some(speed) = self.entry_speed(head, 0.0, head.desired_speed, leader) {
                    let p = self.mainline_queues[q].pop_front().expect("non-empty queue");
                    let v = self.make_vehicle(p, lane as u8, 0.0, speed, None);
                    self.lanes[lane].insert(0, v);
                    self.entered += 1;
                }
            }
        }
        for k in 0..self.ramp_queues.len() {
            let Some(head) = self.ramp_queues[k].front() else { continue };
            let ic = self.scn.network.interchanges[k];
            let start = ic.accel_lane_start();
            let lane0 = &self.lanes[0];
            let at = lane0.partition_point(|o| o.s.position < start);
            let leader = lane0[at..]
                .iter()
                .find(|o| o.ramp == Some(k))
                .map(|l| (l.s.rear(), l.s.speed, l.s.accel, l.s.class))
                .unwrap_or((ic.accel_lane_end(), 0.0, 0.0, VehicleClass::Hv));
            let cap = head.desired_speed.min(kmh_to_ms(self.scn.network.ramp_entry_speed_kmh));
            if let Some(speed) = self.entry_speed(head, start, cap, Some(leader)) {
                let p = self.ramp_queues[k].pop_front().expect("non-empty queue");
                let v = self.make_vehicle(p, 0, start, speed, Some(k));
                self.lanes[0].insert(at, v);
                self.entered += 1;
            }
        }
    }

    /// Largest entry speed not above `cap` at which the gap to the leader
    /// (rear, speed, accel, class) is at least `s0 + v T` and the vehicle's
    /// own law asks for no more than comfortable braking. Entry waits while
    /// that speed is below both `cap` and the leader's speed.
    fn entry_speed(
        &self,
        p: &Pending,
        position: f64,
        cap: f64,
        leader: Option<(f64, f64, f64, VehicleClass)>,
    ) -> Option<f64> {
        let Some((rear, speed, accel, class)) = leader else {
            return Some(cap);
        };
        let gap = rear - position;
        let (s0, b, t) = match p.class {
            VehicleClass::Cav => {
                let ok = class == VehicleClass::Cav && self.scn.config.comm_mode != CommMode::AlwaysOff;
                (self.scn.eidm.s0, self.scn.eidm.b_comf, if ok { self.scn.eidm.t_intra } else { self.scn.eidm.t_inter })
            }
            VehicleClass::Hv => (self.scn.hv.s0, self.scn.hv.b_comf, self.scn.hv.desired_time_gap),
        };
        if gap < s0 {
            return None;
        }
        let v = cap.min((gap - s0) / t);
        if v < cap.min(speed) - 1e-9 {
            return None;
        }
        let view = LeaderView { gap, speed, accel, class };
        let a = match p.class {
            VehicleClass::Cav => eidm_accel(v, 0.0, Some(&view), t, &self.scn.eidm),
            VehicleClass::Hv => idm_accel(v, Some(&view), t, &self.scn.hv.idm(p.desired_speed)),
        };
        (a >= -b).then_some(v)
    }

    fn close_bin(&mut self) {
        let end = self.time();
        let bin = std::mem::take(&mut self.bin);
        self.kpi.push(KpiRecord {
            interval_start: end - BIN_STEPS as f64 * SIM_STEP,
            interval_end: end,
            exited: bin.exited,
            present: self.present(),
            latent: self.latent(),
            vkt: bin.vkt,
            vht: bin.vht,
            delay: bin.delay,
        });
    }

    /// Ends the run: vehicles still on the road are added to the ledger.
    pub fn finish(mut self) -> RawResults {
        let present = self.present();
        let latent = self.latent();
        for v in self.lanes.iter().flatten() {
            self.ledger.push(v.record(None));
        }
        self.ledger.sort_by_key(|r| r.id);
        let summary = RunSummary {
            policy: self.scn.config.policy,
            mpr: self.scn.config.mpr,
            seed: self.seed,
            steps: self.step,
            spawned: self.spawned,
            entered: self.entered,
            exited: self.exited,
            present,
            latent,
            missed_exits: self.missed_exits,
            lane_changes: self.lane_changes,
            min_gap: if self.min_gap.is_finite() { self.min_gap } else { f64::MAX },
            ineligible: self.ineligible,
            comm_updates: self.comm_updates,
            xi_cap_hits: self.xi_cap_hits,
            p_clamp_hits: self.p_clamp_hits,
            result_hash: String::new(),
        };
        let mut out = RawResults {
            summary,
            detectors: self.detectors,
            vehicles: self.ledger,
            comm: self.comm_log,
            kpi: self.kpi,
        };
        out.summary.result_hash = crate::io::results_hash(&out);
        out
    }
}

/// Fraction of the step at which a vehicle starting at `x0` with speed `v0`
/// and constant acceleration `a` reaches `xd`.
fn crossing_fraction(x0: f64, v0: f64, a: f64, xd: f64, dx: f64) -> f64 {
    let dt = SIM_STEP;
    let d = xd - x0;
    let tau = if a.abs() < 1e-9 {
        d / v0.max(1e-12)
    } else {
        let disc = (v0 * v0 + 2.0 * a * d).max(0.0);
        (disc.sqrt() - v0) / a
    };
    if tau.is_finite() {
        (tau / dt).clamp(0.0, 1.0)
    } else {
        d / dx
    }
}

/// Runs one replication of a validated scenario with the given seed.
pub fn run_replication(scn: &ValidatedScenario, seed: u64) -> Result<RawResults, EngineError> {
    let mut world = World::with_seed(scn, seed);
    let total = ((scn.config.warmup_duration + scn.config.measured_duration) / SIM_STEP).round() as u64;
    for _ in 0..total {
        world.step()?;
    }
    Ok(world.finish())
}
