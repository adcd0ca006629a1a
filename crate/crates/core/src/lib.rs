//! Microscopic freeway simulator for mixed human-driven (HV) and connected
//! automated (CAV) traffic.
//!
//! The crate is organised bottom-up:
//!
//! * [`scenario`]: shared domain types (vehicles, network, demand, scenario
//!   configuration) and scenario validation.
//! * [`longitudinal`]: E-IDM/CAH car following for CAVs and the stochastic
//!   human driver model.
//! * [`comm`]: one-hop DSRC reception model, communication density and
//!   per-pair transmission outcomes.
//! * [`lateral`]: managed-lane eligibility, MOBIL lane changes, ramp merges.
//! * [`energy`]: VT-Micro instantaneous fuel rate.
//! * [`engine`]: the 10 Hz simulation loop, detectors and replications.
//! * [`metrics`]: headway, speed-flow, K-S, fuel, communication and network
//!   analyses over run outputs.
//! * [`io`]: CSV schemas for raw and analysis outputs.

pub mod comm;
pub mod energy;
pub mod engine;
pub mod io;
pub mod lateral;
pub mod longitudinal;
pub mod metrics;
pub mod scenario;

pub use comm::{CommCoefficients, CommParams, CommSnapshot};
pub use energy::VtMicroCoefficients;
pub use engine::{run_replication, DetectorRecord, RawResults, World};
pub use lateral::{LaneChangeParams, LanePolicy};
pub use longitudinal::{EidmParams, HvParams, IdmParams, LeaderView};
pub use scenario::{
    validate_scenario, CommMode, DemandSpec, Destination, NetworkSpec, Origin, Policy, Scenario,
    ScenarioConfig, ValidatedScenario, ValidationError, VehicleClass, VehicleId, VehicleState,
};

/// Seconds per controller update (10 Hz).
pub const SIM_STEP: f64 = 0.1;

/// Seconds between communication snapshots (2 Hz).
pub const COMM_UPDATE_INTERVAL: f64 = 0.5;

pub(crate) fn kmh_to_ms(kmh: f64) -> f64 {
    kmh / 3.6
}

pub(crate) fn ms_to_kmh(ms: f64) -> f64 {
    ms * 3.6
}
