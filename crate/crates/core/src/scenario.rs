//! Domain types shared by every module: vehicles, network geometry, demand
//! and scenario configuration, plus scenario validation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::comm::CommParams;
use crate::lateral::LaneChangeParams;
use crate::longitudinal::{EidmParams, HvParams};
use crate::{kmh_to_ms, COMM_UPDATE_INTERVAL, SIM_STEP};

pub type VehicleId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VehicleClass {
    #[serde(rename = "HV")]
    Hv,
    #[serde(rename = "CAV")]
    Cav,
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VehicleClass::Hv => "HV",
            VehicleClass::Cav => "CAV",
        })
    }
}

impl FromStr for VehicleClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "HV" => Ok(VehicleClass::Hv),
            "CAV" => Ok(VehicleClass::Cav),
            _ => Err(format!("unknown vehicle class {s:?}")),
        }
    }
}

/// Where a trip enters the network. Ramp indices are 0-based internally and
/// printed 1-based (`ramp1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Origin {
    Mainline,
    OnRamp(usize),
}

/// Where a trip leaves the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Destination {
    MainlineEnd,
    OffRamp(usize),
}

fn parse_indexed(s: &str, prefix: &str) -> Option<usize> {
    let n: usize = s.strip_prefix(prefix)?.parse().ok()?;
    n.checked_sub(1)
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Mainline => f.write_str("mainline"),
            Origin::OnRamp(k) => write!(f, "ramp{}", k + 1),
        }
    }
}

impl FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "mainline" {
            return Ok(Origin::Mainline);
        }
        parse_indexed(s, "ramp")
            .map(Origin::OnRamp)
            .ok_or_else(|| format!("unknown origin {s:?} (expected mainline or rampN)"))
    }
}

impl TryFrom<String> for Origin {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Origin> for String {
    fn from(o: Origin) -> Self {
        o.to_string()
    }
}

impl fmt::Display for Destination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Destination::MainlineEnd => f.write_str("end"),
            Destination::OffRamp(k) => write!(f, "exit{}", k + 1),
        }
    }
}

impl FromStr for Destination {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "end" {
            return Ok(Destination::MainlineEnd);
        }
        parse_indexed(s, "exit")
            .map(Destination::OffRamp)
            .ok_or_else(|| format!("unknown destination {s:?} (expected end or exitN)"))
    }
}

impl TryFrom<String> for Destination {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Destination> for String {
    fn from(d: Destination) -> Self {
        d.to_string()
    }
}

/// Kinematic and controller state of one vehicle.
///
/// `lane` is 1 for the rightmost mainline lane up to `lane_count` for the
/// leftmost; 0 is the auxiliary acceleration lane of an on-ramp. `position`
/// is the front bumper in metres along the mainline.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    pub class: VehicleClass,
    pub lane: u8,
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
    pub length: f64,
    pub dtg_active: f64,
    pub origin: Origin,
    pub destination: Destination,
    pub entry_time: f64,
    pub desired_speed: f64,
}

impl VehicleState {
    pub fn rear(&self) -> f64 {
        self.position - self.length
    }
}

/// One interchange: an off-ramp diverge upstream of `position` and an on-ramp
/// acceleration lane downstream of it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterchangeSpec {
    pub position: f64,
    /// Distance from the off-ramp gore upstream to `position`, m.
    pub diverge_distance: f64,
    pub decel_lane_length: f64,
    /// Distance from `position` downstream to the start of the acceleration lane, m.
    pub merge_distance: f64,
    pub accel_lane_length: f64,
}

impl InterchangeSpec {
    pub fn at(position: f64) -> Self {
        Self {
            position,
            diverge_distance: 200.0,
            decel_lane_length: 150.0,
            merge_distance: 100.0,
            accel_lane_length: 300.0,
        }
    }

    /// Point in lane 1 where exiting vehicles leave the mainline (start of
    /// the deceleration lane).
    pub fn exit_point(&self) -> f64 {
        self.position - self.diverge_distance - self.decel_lane_length
    }

    pub fn accel_lane_start(&self) -> f64 {
        self.position + self.merge_distance
    }

    pub fn accel_lane_end(&self) -> f64 {
        self.accel_lane_start() + self.accel_lane_length
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub mainline_length: f64,
    pub lane_count: u8,
    pub interchanges: Vec<InterchangeSpec>,
    pub detector_positions: Vec<f64>,
    pub speed_limit_kmh: f64,
    pub desired_speed_kmh: f64,
    pub vehicle_length: f64,
    /// Speed cap for vehicles entering an acceleration lane, km/h.
    pub ramp_entry_speed_kmh: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            mainline_length: 9300.0,
            lane_count: 4,
            interchanges: vec![InterchangeSpec::at(2000.0), InterchangeSpec::at(6000.0)],
            detector_positions: vec![1500.0, 4000.0, 7500.0],
            speed_limit_kmh: 120.0,
            desired_speed_kmh: 105.0,
            vehicle_length: 4.5,
            ramp_entry_speed_kmh: 60.0,
        }
    }
}

impl NetworkSpec {
    /// A single straight lane without ramps.
    pub fn single_lane(length: f64, detectors: Vec<f64>) -> Self {
        Self {
            mainline_length: length,
            lane_count: 1,
            interchanges: Vec::new(),
            detector_positions: detectors,
            ..Self::default()
        }
    }

    pub fn speed_limit(&self) -> f64 {
        kmh_to_ms(self.speed_limit_kmh)
    }

    pub fn detector_name(index: usize) -> String {
        format!("C{}", index + 1)
    }

    fn check(&self, errors: &mut Vec<(String, String)>) {
        let mut bad = |field: String, msg: &str| errors.push((format!("network.{field}"), msg.into()));
        if !(self.mainline_length > 0.0) {
            bad("mainline_length".into(), "must be positive");
        }
        if !(1..=4).contains(&self.lane_count) {
            bad("lane_count".into(), "must lie in 1..=4");
        }
        if !(self.vehicle_length > 0.0) {
            bad("vehicle_length".into(), "must be positive");
        }
        if !(self.speed_limit_kmh > 0.0) {
            bad("speed_limit_kmh".into(), "must be positive");
        }
        if !(self.ramp_entry_speed_kmh > 0.0) {
            bad("ramp_entry_speed_kmh".into(), "must be positive");
        }
        let mut prev = 0.0;
        for (k, ic) in self.interchanges.iter().enumerate() {
            if !(ic.position > prev && ic.position < self.mainline_length) {
                bad(
                    format!("interchanges[{k}].position"),
                    "interchanges must be strictly increasing and inside the mainline",
                );
            }
            if !(ic.exit_point() > prev && ic.accel_lane_end() < self.mainline_length) {
                bad(
                    format!("interchanges[{k}]"),
                    "ramp lanes must fit between neighbouring interchanges and inside the mainline",
                );
            }
            if ic.diverge_distance < 0.0
                || ic.decel_lane_length < 0.0
                || ic.merge_distance < 0.0
                || !(ic.accel_lane_length > 0.0)
            {
                bad(format!("interchanges[{k}]"), "ramp lengths must be non-negative");
            }
            prev = ic.accel_lane_end();
        }
        let mut prev = 0.0;
        for (k, &d) in self.detector_positions.iter().enumerate() {
            if !(d > prev && d < self.mainline_length) {
                bad(
                    format!("detector_positions[{k}]"),
                    "detectors must be strictly increasing and strictly inside the mainline",
                );
            }
            prev = d;
        }
    }
}

/// Demand of one origin-destination pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdFlow {
    pub origin: Origin,
    pub destination: Destination,
    pub rate_vph: f64,
}

/// O-D demand and the CAV market penetration rate shared by all pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandSpec {
    pub flows: Vec<OdFlow>,
    /// Kept in sync with `ScenarioConfig::mpr` by [`Scenario::set_mpr`].
    #[serde(skip)]
    pub mpr: f64,
}

impl Default for DemandSpec {
    fn default() -> Self {
        Self::from_origin_rates(8000.0, &[1000.0, 1000.0], 0.10, 0.0)
    }
}

impl DemandSpec {
    /// Builds O-D flows from origin rates: each off-ramp takes `exit_fraction`
    /// of the traffic passing it; each on-ramp joins just downstream of its
    /// interchange's off-ramp.
    pub fn from_origin_rates(mainline_vph: f64, ramp_vph: &[f64], exit_fraction: f64, mpr: f64) -> Self {
        let n = ramp_vph.len();
        let mut flows = Vec::new();
        let mut route = |origin: Origin, first_exit: usize, rate: f64| {
            let mut through = rate;
            for k in first_exit..n {
                let exiting = through * exit_fraction;
                if exiting > 0.0 {
                    flows.push(OdFlow { origin, destination: Destination::OffRamp(k), rate_vph: exiting });
                }
                through -= exiting;
            }
            flows.push(OdFlow { origin, destination: Destination::MainlineEnd, rate_vph: through });
        };
        route(Origin::Mainline, 0, mainline_vph);
        for (k, &r) in ramp_vph.iter().enumerate() {
            route(Origin::OnRamp(k), k + 1, r);
        }
        Self { flows, mpr }
    }

    /// Mainline-only demand.
    pub fn mainline_only(rate_vph: f64, mpr: f64) -> Self {
        Self {
            flows: vec![OdFlow { origin: Origin::Mainline, destination: Destination::MainlineEnd, rate_vph }],
            mpr,
        }
    }

    pub fn total(&self) -> f64 {
        self.flows.iter().map(|f| f.rate_vph).sum()
    }

    pub fn origin_total(&self, origin: Origin) -> f64 {
        self.flows.iter().filter(|f| f.origin == origin).map(|f| f.rate_vph).sum()
    }

    /// Distinct origins in a stable order.
    pub fn origins(&self) -> Vec<Origin> {
        let mut v: Vec<Origin> = self.flows.iter().map(|f| f.origin).collect();
        v.sort();
        v.dedup();
        v
    }

    fn check(&self, net: &NetworkSpec, errors: &mut Vec<(String, String)>) {
        let n_ic = net.interchanges.len();
        for (k, f) in self.flows.iter().enumerate() {
            let path = format!("demand.flows[{k}]");
            if !(f.rate_vph >= 0.0 && f.rate_vph.is_finite()) {
                errors.push((format!("{path}.rate_vph"), "flows must be non-negative".into()));
            }
            if let Origin::OnRamp(r) = f.origin {
                if r >= n_ic {
                    errors.push((format!("{path}.origin"), "on-ramp does not exist".into()));
                }
            }
            match (f.origin, f.destination) {
                (_, Destination::OffRamp(x)) if x >= n_ic => {
                    errors.push((format!("{path}.destination"), "off-ramp does not exist".into()));
                }
                (Origin::OnRamp(r), Destination::OffRamp(x)) if x <= r => {
                    errors.push((format!("{path}.destination"), "off-ramp is upstream of the origin".into()));
                }
                _ => {}
            }
        }
        let ramps: f64 = self
            .flows
            .iter()
            .filter(|f| f.origin != Origin::Mainline)
            .map(|f| f.rate_vph)
            .sum();
        if self.origin_total(Origin::Mainline) < ramps {
            errors.push((
                "demand.flows".into(),
                "mainline-origin demand must dominate total ramp demand".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mpr) {
            errors.push(("demand.mpr".into(), "mpr must lie in [0, 1]".into()));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "NML")]
    Nml,
    #[serde(rename = "CAV1", alias = "CAV-1")]
    Cav1,
    #[serde(rename = "CAV2", alias = "CAV-2")]
    Cav2,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Nml, Policy::Cav1, Policy::Cav2];

    /// Smallest market penetration at which the policy is evaluated.
    pub fn min_mpr(self) -> f64 {
        match self {
            Policy::Nml => 0.0,
            Policy::Cav1 => 0.3,
            Policy::Cav2 => 0.4,
        }
    }

    /// Number of leftmost lanes reserved for CAVs.
    pub fn managed_lanes(self) -> u8 {
        match self {
            Policy::Nml => 0,
            Policy::Cav1 => 1,
            Policy::Cav2 => 2,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Nml => "NML",
            Policy::Cav1 => "CAV1",
            Policy::Cav2 => "CAV2",
        })
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "").as_str() {
            "NML" => Ok(Policy::Nml),
            "CAV1" => Ok(Policy::Cav1),
            "CAV2" => Ok(Policy::Cav2),
            _ => Err(format!("unknown policy {s:?} (expected NML, CAV1 or CAV2)")),
        }
    }
}

/// How leader-to-follower message delivery is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommMode {
    /// Reception model draws.
    #[default]
    Model,
    /// Every CAV-to-CAV message delivered.
    AlwaysOn,
    /// No message ever delivered.
    AlwaysOff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub policy: Policy,
    pub mpr: f64,
    pub seed: u64,
    pub warmup_duration: f64,
    pub measured_duration: f64,
    pub sim_step: f64,
    pub comm_update_interval: f64,
    pub replications: u32,
    pub comm_mode: CommMode,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            policy: Policy::Nml,
            mpr: 0.0,
            seed: 1,
            warmup_duration: 900.0,
            measured_duration: 3600.0,
            sim_step: SIM_STEP,
            comm_update_interval: COMM_UPDATE_INTERVAL,
            replications: 5,
            comm_mode: CommMode::Model,
        }
    }
}

/// Everything a replication needs. Deserializes from the TOML scenario file;
/// every section is optional and defaults to the reference experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub network: NetworkSpec,
    pub demand: DemandSpec,
    pub eidm: EidmParams,
    pub hv: HvParams,
    pub comm: CommParams,
    pub lane_change: LaneChangeParams,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        let mut s: Scenario = toml::from_str(text)?;
        s.demand.mpr = s.config.mpr;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn set_mpr(&mut self, mpr: f64) {
        self.config.mpr = mpr;
        self.demand.mpr = mpr;
    }

    pub fn with(mut self, policy: Policy, mpr: f64, seed: u64) -> Self {
        self.config.policy = policy;
        self.config.seed = seed;
        self.set_mpr(mpr);
        self
    }

    pub fn validate(self) -> Result<ValidatedScenario, Vec<ValidationError>> {
        validate_scenario(&self.config, &self.network, &self.demand)?;
        let mut errs = Vec::new();
        self.eidm.check(&mut errs);
        self.hv.check(&mut errs);
        self.comm.check(&mut errs);
        self.lane_change.check(&mut errs);
        if errs.is_empty() {
            Ok(ValidatedScenario(self))
        } else {
            Err(into_errors(errs))
        }
    }
}

/// One violated invariant, addressed by its field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for ValidationError {}

fn into_errors(v: Vec<(String, String)>) -> Vec<ValidationError> {
    v.into_iter().map(|(path, message)| ValidationError { path, message }).collect()
}

/// Checks configuration, network and demand invariants. Pure: the same
/// inputs always produce the same error list, in the same order.
pub fn validate_scenario(
    cfg: &ScenarioConfig,
    net: &NetworkSpec,
    demand: &DemandSpec,
) -> Result<(), Vec<ValidationError>> {
    let mut errs: Vec<(String, String)> = Vec::new();
    if (cfg.sim_step - SIM_STEP).abs() > 1e-12 {
        errs.push(("config.sim_step".into(), "controller update must be 10 Hz".into()));
    }
    if (cfg.comm_update_interval - COMM_UPDATE_INTERVAL).abs() > 1e-12 {
        errs.push(("config.comm_update_interval".into(), "communication update must be 2 Hz".into()));
    }
    if !(0.0..=1.0).contains(&cfg.mpr) {
        errs.push(("config.mpr".into(), "mpr must lie in [0, 1]".into()));
    } else if cfg.mpr + 1e-9 < cfg.policy.min_mpr() {
        errs.push(("config.mpr".into(), "mpr below policy minimum".into()));
    }
    if (cfg.mpr - demand.mpr).abs() > 1e-12 {
        errs.push(("demand.mpr".into(), "mpr must be identical for every O-D pair and the config".into()));
    }
    if !(cfg.warmup_duration >= 0.0) {
        errs.push(("config.warmup_duration".into(), "must be non-negative".into()));
    }
    if !(cfg.measured_duration > 0.0) {
        errs.push(("config.measured_duration".into(), "must be positive".into()));
    }
    if cfg.replications == 0 {
        errs.push(("config.replications".into(), "must be at least 1".into()));
    }
    if cfg.policy.managed_lanes() >= net.lane_count {
        errs.push(("config.policy".into(), "policy needs at least one general-purpose lane".into()));
    }
    net.check(&mut errs);
    demand.check(net, &mut errs);
    if errs.is_empty() {
        Ok(())
    } else {
        Err(into_errors(errs))
    }
}

/// A scenario whose invariants have been checked. Immutable, cheap to share
/// across concurrently running replications.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedScenario(Scenario);

impl ValidatedScenario {
    pub fn scenario(&self) -> &Scenario {
        &self.0
    }

    pub fn into_inner(self) -> Scenario {
        self.0
    }
}

impl std::ops::Deref for ValidatedScenario {
    type Target = Scenario;
    fn deref(&self) -> &Scenario {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Scenario {
        Scenario::default()
    }

    #[test]
    fn nml_zero_mpr_is_valid() {
        assert!(base().with(Policy::Nml, 0.0, 1).validate().is_ok());
    }

    #[test]
    fn cav2_below_minimum() {
        let errs = base().with(Policy::Cav2, 0.2, 1).validate().unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].path, "config.mpr");
        assert_eq!(errs[0].message, "mpr below policy minimum");
        assert!(base().with(Policy::Cav2, 0.4, 1).validate().is_ok());
        assert!(base().with(Policy::Cav1, 0.3, 1).validate().is_ok());
        assert!(base().with(Policy::Cav1, 0.29, 1).validate().is_err());
    }

    #[test]
    fn step_must_be_10hz() {
        let mut s = base();
        s.config.sim_step = 0.2;
        let errs = s.validate().unwrap_err();
        assert!(errs.iter().any(|e| e.message == "controller update must be 10 Hz"));
    }

    #[test]
    fn reports_every_violation() {
        let mut s = base().with(Policy::Cav2, 0.1, 1);
        s.config.sim_step = 0.05;
        s.network.detector_positions = vec![4000.0, 1500.0];
        s.network.interchanges.reverse();
        let errs = s.validate().unwrap_err();
        let paths: Vec<_> = errs.iter().map(|e| e.path.as_str()).collect();
        assert!(paths.contains(&"config.sim_step"));
        assert!(paths.contains(&"config.mpr"));
        assert!(paths.contains(&"network.detector_positions[1]"));
        assert!(paths.iter().any(|p| p.starts_with("network.interchanges")));
    }

    #[test]
    fn validation_is_pure() {
        let mut s = base().with(Policy::Cav1, 0.1, 3);
        s.network.detector_positions.push(1.0);
        let a = validate_scenario(&s.config, &s.network, &s.demand);
        let b = validate_scenario(&s.config, &s.network, &s.demand);
        assert_eq!(a, b);
    }

    #[test]
    fn default_demand_split() {
        let d = DemandSpec::default();
        assert!((d.total() - 10_000.0).abs() < 1e-9);
        assert!((d.origin_total(Origin::Mainline) - 8000.0).abs() < 1e-9);
        let exit1: f64 = d
            .flows
            .iter()
            .filter(|f| f.destination == Destination::OffRamp(0))
            .map(|f| f.rate_vph)
            .sum();
        assert!((exit1 - 800.0).abs() < 1e-9);
        // ramp 2 joins after the last off-ramp
        let r2: Vec<_> = d.flows.iter().filter(|f| f.origin == Origin::OnRamp(1)).collect();
        assert_eq!(r2.len(), 1);
        assert_eq!(r2[0].destination, Destination::MainlineEnd);
    }

    #[test]
    fn negative_flow_rejected() {
        let mut s = base();
        s.demand.flows[0].rate_vph = -1.0;
        let errs = s.validate().unwrap_err();
        assert!(errs.iter().any(|e| e.path == "demand.flows[0].rate_vph"));
    }

    #[test]
    fn toml_round_trip() {
        let s = base().with(Policy::Cav1, 0.7, 42);
        let text = s.to_toml_string();
        let back = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let s = Scenario::from_toml_str("[config]\npolicy = \"CAV2\"\nmpr = 0.5\n").unwrap();
        assert_eq!(s.config.policy, Policy::Cav2);
        assert_eq!(s.demand.mpr, 0.5);
        assert_eq!(s.network, NetworkSpec::default());
        assert!(s.validate().is_ok());
    }

    #[test]
    fn names_round_trip() {
        for o in [Origin::Mainline, Origin::OnRamp(0), Origin::OnRamp(1)] {
            assert_eq!(o.to_string().parse::<Origin>().unwrap(), o);
        }
        for d in [Destination::MainlineEnd, Destination::OffRamp(1)] {
            assert_eq!(d.to_string().parse::<Destination>().unwrap(), d);
        }
        assert_eq!("CAV-1".parse::<Policy>().unwrap(), Policy::Cav1);
        assert!("ramp0".parse::<Origin>().is_err());
    }
}
