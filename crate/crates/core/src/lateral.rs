//! Lane eligibility under managed-lane policies and MOBIL-style lane changes,
//! including mandatory moves toward off-ramps and merges from acceleration
//! lanes.

use serde::{Deserialize, Serialize};

use crate::scenario::{Policy, VehicleClass, VehicleId};
use crate::SIM_STEP;

/// Lane eligibility for one policy on a road with `lane_count` lanes. The
/// leftmost `policy.managed_lanes()` lanes are CAV-only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LanePolicy {
    pub policy: Policy,
    pub lane_count: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("lane {lane} outside 1..={lane_count}")]
pub struct LaneOutOfRange {
    pub lane: u8,
    pub lane_count: u8,
}

impl LanePolicy {
    pub fn new(policy: Policy, lane_count: u8) -> Self {
        Self { policy, lane_count }
    }

    pub fn is_managed(&self, lane: u8) -> bool {
        lane + self.policy.managed_lanes() > self.lane_count
    }

    pub fn allows(&self, class: VehicleClass, lane: u8) -> Result<bool, LaneOutOfRange> {
        if lane == 0 || lane > self.lane_count {
            return Err(LaneOutOfRange { lane, lane_count: self.lane_count });
        }
        Ok(class == VehicleClass::Cav || !self.is_managed(lane))
    }

    /// Eligible lanes for `class`, rightmost first.
    pub fn eligible_lanes(&self, class: VehicleClass) -> Vec<u8> {
        (1..=self.lane_count).filter(|&l| self.allows(class, l).unwrap_or(false)).collect()
    }
}

pub fn lane_eligible(policy: LanePolicy, class: VehicleClass, lane: u8) -> Result<bool, LaneOutOfRange> {
    policy.allows(class, lane)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaneChangeParams {
    pub politeness: f64,
    /// Minimum net acceleration gain for a discretionary change, m/s².
    pub threshold: f64,
    /// Largest deceleration a change may impose on the new follower, m/s².
    pub safe_decel: f64,
    /// Deceleration tolerated at the start of a mandatory zone; relaxes
    /// linearly to `safe_decel` at its end.
    pub mandatory_initial_decel: f64,
    /// Smallest bumper-to-bumper gap accepted on either side, m.
    pub min_gap: f64,
    /// Seconds between two changes of the same vehicle.
    pub cooldown: f64,
    /// Minimum time between successive mandatory changes, s.
    pub mandatory_cooldown: f64,
    /// Incentive added when a CAV enters a managed lane and subtracted when
    /// it leaves one, m/s².
    pub managed_bias: f64,
    /// Distance upstream of an exit at which vehicles bound for it start
    /// moving right, m.
    pub exit_lookahead: f64,
}

impl Default for LaneChangeParams {
    fn default() -> Self {
        Self {
            politeness: 0.3,
            threshold: 0.1,
            safe_decel: 4.0,
            mandatory_initial_decel: 2.0,
            min_gap: 1.0,
            cooldown: 3.0,
            mandatory_cooldown: 1.0,
            managed_bias: 2.5,
            exit_lookahead: 500.0,
        }
    }
}

impl LaneChangeParams {
    pub(crate) fn check(&self, errors: &mut Vec<(String, String)>) {
        let mut bad = |field: &str, msg: &str| errors.push((format!("lane_change.{field}"), msg.into()));
        if !(0.0..=1.0).contains(&self.politeness) {
            bad("politeness", "must lie in [0, 1]");
        }
        if !(self.safe_decel > 0.0 && self.safe_decel <= 9.0) {
            bad("safe_decel", "must lie in (0, 9] m/s^2");
        }
        if !(self.mandatory_initial_decel > 0.0 && self.mandatory_initial_decel <= self.safe_decel) {
            bad("mandatory_initial_decel", "must lie in (0, safe_decel]");
        }
        if !(self.cooldown >= 0.0) {
            bad("cooldown", "must be non-negative");
        }
        if !(self.managed_bias >= 0.0) {
            bad("managed_bias", "must be non-negative");
        }
        if !(self.mandatory_cooldown >= 0.0) {
            bad("mandatory_cooldown", "must be non-negative");
        }
        if !(self.min_gap >= 0.0) {
            bad("min_gap", "must be non-negative");
        }
        if !(self.exit_lookahead > 0.0) {
            bad("exit_lookahead", "must be positive");
        }
    }

    /// Tolerated follower deceleration when `remaining` of a `zone`-long
    /// mandatory stretch is left.
    pub fn mandatory_decel(&self, remaining: f64, zone: f64) -> f64 {
        let frac = if zone > 0.0 { (remaining / zone).clamp(0.0, 1.0) } else { 0.0 };
        self.safe_decel + (self.mandatory_initial_decel - self.safe_decel) * frac
    }
}

/// Kinematic view of a vehicle used for lane-change evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agent {
    pub id: VehicleId,
    pub class: VehicleClass,
    /// Front bumper, m.
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
    pub length: f64,
    pub desired_speed: f64,
}

impl Agent {
    pub fn rear(&self) -> f64 {
        self.position - self.length
    }
}

/// Immediate leader and follower of the subject's longitudinal position in
/// one lane (the subject itself excluded).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LaneView {
    pub lead: Option<Agent>,
    pub lag: Option<Agent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneDecision {
    Stay,
    Left,
    Right,
}

/// The subject's current lane and the adjacent lanes that exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surroundings {
    pub lane: u8,
    pub current: LaneView,
    pub left: Option<LaneView>,
    pub right: Option<LaneView>,
}

/// Outcome of inserting the subject in front of `lag` and behind `lead`.
struct Insertion {
    own_after: f64,
    lag_before: f64,
    lag_after: f64,
}

/// Bumper gaps on both sides must exceed `min_gap` plus the distance closed
/// in one step at the current speed difference.
fn gaps_ok(subject: &Agent, view: &LaneView, min_gap: f64) -> bool {
    let front = view.lead.is_none_or(|l| {
        l.rear() - subject.position >= min_gap + (subject.speed - l.speed).max(0.0) * SIM_STEP
    });
    let back = view.lag.is_none_or(|f| {
        subject.rear() - f.position >= min_gap + (f.speed - subject.speed).max(0.0) * SIM_STEP
    });
    front && back
}

fn insertion_ok(ins: &Insertion, has_lag: bool, decel_limit: f64) -> bool {
    ins.own_after >= -decel_limit && (!has_lag || ins.lag_after >= -decel_limit)
}

fn insertion<F>(subject: &Agent, view: &LaneView, accel: &F) -> Insertion
where
    F: Fn(&Agent, Option<&Agent>) -> f64,
{
    let own_after = accel(subject, view.lead.as_ref());
    let (lag_before, lag_after) = match &view.lag {
        Some(f) => (accel(f, view.lead.as_ref()), accel(f, Some(subject))),
        None => (0.0, 0.0),
    };
    Insertion { own_after, lag_before, lag_after }
}

/// Whether the subject can be inserted into `view` without anyone braking
/// harder than `decel_limit`.
pub fn safe_insertion<F>(subject: &Agent, view: &LaneView, decel_limit: f64, min_gap: f64, accel: &F) -> bool
where
    F: Fn(&Agent, Option<&Agent>) -> f64,
{
    if !gaps_ok(subject, view, min_gap) {
        return false;
    }
    insertion_ok(&insertion(subject, view, accel), view.lag.is_some(), decel_limit)
}

/// MOBIL incentive of moving from `current` into `target`, or `None` when
/// the move is unsafe.
fn mobil_gain<F>(subject: &Agent, current: &LaneView, target: &LaneView, p: &LaneChangeParams, accel: &F) -> Option<f64>
where
    F: Fn(&Agent, Option<&Agent>) -> f64,
{
    if !gaps_ok(subject, target, p.min_gap) {
        return None;
    }
    let ins = insertion(subject, target, accel);
    if !insertion_ok(&ins, target.lag.is_some(), p.safe_decel) {
        return None;
    }
    let own_before = accel(subject, current.lead.as_ref());
    let (old_before, old_after) = match &current.lag {
        Some(o) => (accel(o, Some(subject)), accel(o, current.lead.as_ref())),
        None => (0.0, 0.0),
    };
    let own = ins.own_after - own_before;
    let others = (ins.lag_after - ins.lag_before) + (old_after - old_before);
    Some(own + p.politeness * others)
}

/// Discretionary MOBIL decision. `accel(follower, leader)` evaluates the
/// car-following law of `follower` behind a hypothetical `leader`.
pub fn discretionary_lane_change<F>(
    subject: &Agent,
    around: &Surroundings,
    since_last_change: f64,
    params: &LaneChangeParams,
    policy: LanePolicy,
    accel: F,
) -> LaneDecision
where
    F: Fn(&Agent, Option<&Agent>) -> f64,
{
    if since_last_change < params.cooldown {
        return LaneDecision::Stay;
    }
    let eligible = |lane: u8| policy.allows(subject.class, lane).unwrap_or(false);
    let bias = |to: u8| {
        if subject.class != VehicleClass::Cav {
            return 0.0;
        }
        match (policy.is_managed(around.lane), policy.is_managed(to)) {
            (false, true) => params.managed_bias,
            (true, false) => -params.managed_bias,
            _ => 0.0,
        }
    };
    let mut best = (LaneDecision::Stay, params.threshold);
    if let Some(view) = &around.left {
        if eligible(around.lane + 1) {
            if let Some(g) = mobil_gain(subject, &around.current, view, params, &accel) {
                let g = g + bias(around.lane + 1);
                if g > best.1 {
                    best = (LaneDecision::Left, g);
                }
            }
        }
    }
    if let Some(view) = &around.right {
        if around.lane > 1 && eligible(around.lane - 1) {
            if let Some(g) = mobil_gain(subject, &around.current, view, params, &accel) {
                let g = g + bias(around.lane - 1);
                if g > best.1 {
                    best = (LaneDecision::Right, g);
                }
            }
        }
    }
    best.0
}

/// Mandatory move of one lane to the right (toward an exit or out of an
/// acceleration lane). `remaining` is the distance left in a mandatory zone
/// of length `zone`; the tolerated deceleration relaxes as it shrinks. The
/// incentive test is skipped.
pub fn mandatory_merge<F>(
    subject: &Agent,
    target: &LaneView,
    remaining: f64,
    zone: f64,
    params: &LaneChangeParams,
    accel: F,
) -> bool
where
    F: Fn(&Agent, Option<&Agent>) -> f64,
{
    let limit = params.mandatory_decel(remaining, zone);
    safe_insertion(subject, target, limit, params.min_gap, &accel)
}
