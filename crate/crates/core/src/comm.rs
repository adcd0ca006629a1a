//! One-hop DSRC reception model, communication density and per-pair
//! transmission outcomes.
//!
//! Reception probability at distance `x` is
//! `exp(-3 (x/φ)²) · (1 + Σ h_i(ξ, φ) (x/φ)^i)` with `ξ = δ φ f`. The fitted
//! polynomials are evaluated with φ in kilometres and ξ capped at
//! [`XI_CAP`]; outside that domain the fit diverges.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scenario::{CommMode, VehicleClass, VehicleId, VehicleState};

/// `(j, k)` exponent pairs of the 15 polynomial terms, in file column order.
pub const TERMS: [(i32, i32); 15] = [
    (0, 0),
    (1, 0),
    (2, 0),
    (3, 0),
    (4, 0),
    (3, 1),
    (2, 1),
    (2, 2),
    (1, 1),
    (1, 2),
    (1, 3),
    (0, 1),
    (0, 2),
    (0, 3),
    (0, 4),
];

/// Largest communication density (events/s/km) fed to the polynomials.
pub const XI_CAP: f64 = 3.0e5;

/// Factor converting φ (m) to the unit the polynomials were fitted in (km).
pub const POLY_PHI_SCALE: f64 = 1.0e-3;

const BUILTIN_TABLE: &str = include_str!("../data/comm_coefficients.txt");
const BUILTIN_SHA256: &str = "0476cf536a59a74c12de0fd22826b871da3a8b916aceba521845649ceb8574a4";

#[derive(Debug, thiserror::Error)]
pub enum CommError {
    #[error("polynomial index {0} outside 1..=4")]
    BadIndex(usize),
    #[error("coefficient table: {0}")]
    Parse(String),
    #[error("coefficient table checksum mismatch: expected {expected}, found {found}")]
    Checksum { expected: String, found: String },
    #[error("reading coefficient table: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommParams {
    /// Transmission power range, m.
    pub phi: f64,
    /// Broadcast rate, Hz.
    pub f: f64,
    pub attempts: u32,
    /// Seconds between density and outcome updates.
    pub density_update_interval: f64,
}

impl Default for CommParams {
    fn default() -> Self {
        Self { phi: 300.0, f: 10.0, attempts: 5, density_update_interval: crate::COMM_UPDATE_INTERVAL }
    }
}

impl CommParams {
    pub(crate) fn check(&self, errors: &mut Vec<(String, String)>) {
        if !(self.phi > 0.0) {
            errors.push(("comm.phi".into(), "must be positive".into()));
        }
        if !(self.f > 0.0) {
            errors.push(("comm.f".into(), "must be positive".into()));
        }
        if self.attempts == 0 {
            errors.push(("comm.attempts".into(), "must be at least 1".into()));
        }
        if (self.density_update_interval - crate::COMM_UPDATE_INTERVAL).abs() > 1e-12 {
            errors.push(("comm.density_update_interval".into(), "communication update must be 2 Hz".into()));
        }
    }

    pub fn xi(&self, delta: f64) -> f64 {
        delta * self.phi * self.f
    }
}

/// `h[i][t]` is the coefficient of term `TERMS[t]` in polynomial `h_{i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommCoefficients {
    pub h: [[f64; 15]; 4],
}

impl CommCoefficients {
    /// The table shipped with the crate, checksum-verified.
    pub fn builtin() -> Self {
        Self::from_text_checked(BUILTIN_TABLE, BUILTIN_SHA256).expect("shipped coefficient table is valid")
    }

    pub fn zeros() -> Self {
        Self { h: [[0.0; 15]; 4] }
    }

    pub fn load(path: &Path, expected_sha256: Option<&str>) -> Result<Self, CommError> {
        let text = std::fs::read_to_string(path)?;
        match expected_sha256 {
            Some(sum) => Self::from_text_checked(&text, sum),
            None => Self::from_text(&text),
        }
    }

    pub fn from_text_checked(text: &str, expected_sha256: &str) -> Result<Self, CommError> {
        let found = hex_digest(text.as_bytes());
        if !found.eq_ignore_ascii_case(expected_sha256) {
            return Err(CommError::Checksum { expected: expected_sha256.to_string(), found });
        }
        Self::from_text(text)
    }

    /// Parses four `hN v1 .. v15` rows. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self, CommError> {
        let mut h = [[f64::NAN; 15]; 4];
        let mut seen = [false; 4];
        let mut count = 0;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let tag = fields.next().unwrap_or_default();
            let row = tag
                .strip_prefix('h')
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|n| (1..=4).contains(n))
                .ok_or_else(|| CommError::Parse(format!("line {}: bad row tag {tag:?}", lineno + 1)))?;
            if seen[row - 1] {
                return Err(CommError::Parse(format!("line {}: duplicate row {tag}", lineno + 1)));
            }
            seen[row - 1] = true;
            let values: Vec<f64> = fields
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CommError::Parse(format!("line {}: {e}", lineno + 1)))?;
            if values.len() != 15 {
                return Err(CommError::Parse(format!(
                    "line {}: expected 15 coefficients, found {}",
                    lineno + 1,
                    values.len()
                )));
            }
            if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                return Err(CommError::Parse(format!("line {}: non-finite coefficient {v}", lineno + 1)));
            }
            h[row - 1].copy_from_slice(&values);
            count += 15;
        }
        if count != 60 {
            return Err(CommError::Parse(format!("expected 60 coefficients, found {count}")));
        }
        Ok(Self { h })
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// `h_i(ξ, φ)` over the 15 listed terms, with the arguments used as given.
pub fn poly_h(i: usize, xi: f64, phi: f64, coeffs: &CommCoefficients) -> Result<f64, CommError> {
    if !(1..=4).contains(&i) {
        return Err(CommError::BadIndex(i));
    }
    let xp = [1.0, xi, xi * xi, xi * xi * xi, xi * xi * xi * xi];
    let pp = [1.0, phi, phi * phi, phi * phi * phi, phi * phi * phi * phi];
    Ok(coeffs.h[i - 1]
        .iter()
        .zip(TERMS)
        .map(|(c, (j, k))| c * xp[j as usize] * pp[k as usize])
        .sum())
}

/// Reception probability together with clamp telemetry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reception {
    pub p: f64,
    pub xi_capped: bool,
    pub p_clamped: bool,
}

pub fn reception_detail(x: f64, delta: f64, phi: f64, f: f64, coeffs: &CommCoefficients) -> Reception {
    let xi = delta * phi * f;
    let xi_capped = xi > XI_CAP;
    let xi_eval = xi.min(XI_CAP);
    let phi_eval = phi * POLY_PHI_SCALE;
    let r = x / phi;
    let mut poly = 0.0;
    let mut rp = 1.0;
    for i in 1..=4 {
        rp *= r;
        poly += poly_h(i, xi_eval, phi_eval, coeffs).expect("index in range") * rp;
    }
    let raw = (-3.0 * r * r).exp() * (1.0 + poly);
    let p = raw.clamp(0.0, 1.0);
    Reception { p, xi_capped, p_clamped: p != raw }
}

/// Single-attempt one-hop reception probability at distance `x` (m) for a
/// receiver seeing broadcast density `delta` (veh/km).
pub fn reception_probability(x: f64, delta: f64, phi: f64, f: f64, coeffs: &CommCoefficients) -> f64 {
    reception_detail(x, delta, phi, f, coeffs).p
}

/// Whether at least one of `attempts` independent tries gets through.
pub fn transmission_success<R: Rng + ?Sized>(p_single: f64, attempts: u32, rng: &mut R) -> bool {
    let p = 1.0 - (1.0 - p_single).powi(attempts as i32);
    if p >= 1.0 {
        return true;
    }
    if p <= 0.0 {
        return false;
    }
    rng.random::<f64>() < p
}

/// CAVs per km within ±φ of `subject`, all lanes, subject included.
pub fn comm_density(vehicles: &[VehicleState], subject: VehicleId, phi: f64) -> f64 {
    let Some(me) = vehicles.iter().find(|v| v.id == subject) else {
        return 0.0;
    };
    let n = vehicles
        .iter()
        .filter(|v| v.class == VehicleClass::Cav && (v.position - me.position).abs() <= phi)
        .count();
    n as f64 / (2.0 * phi / 1000.0)
}

/// Densities for many subjects from the ascending CAV positions.
pub fn densities_sorted(cav_positions: &[f64], subjects: &[f64], phi: f64) -> Vec<f64> {
    let window_km = 2.0 * phi / 1000.0;
    subjects
        .iter()
        .map(|&x| {
            let lo = cav_positions.partition_point(|&p| p < x - phi);
            let hi = cav_positions.partition_point(|&p| p <= x + phi);
            (hi - lo) as f64 / window_km
        })
        .collect()
}

/// A CAV follower whose immediate leader is a CAV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommPair {
    pub follower: VehicleId,
    pub leader: VehicleId,
    /// Front-to-front distance, m.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOutcome {
    pub leader: VehicleId,
    pub distance: f64,
    pub p_single: f64,
    pub success: bool,
}

/// Communication state published at one 2 Hz update and held until the next.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommSnapshot {
    pub time: f64,
    /// Per CAV: (δ veh/km, ξ events/s/km).
    pub density: BTreeMap<VehicleId, (f64, f64)>,
    /// Keyed by follower.
    pub pairs: BTreeMap<VehicleId, PairOutcome>,
    pub xi_cap_hits: u64,
    pub p_clamp_hits: u64,
}

impl CommSnapshot {
    /// True when the follower received its current leader at the last update.
    pub fn comm_ok(&self, follower: VehicleId, leader: VehicleId) -> bool {
        self.pairs.get(&follower).is_some_and(|o| o.leader == leader && o.success)
    }

    pub fn mean_reception(&self) -> Option<f64> {
        if self.pairs.is_empty() {
            return None;
        }
        Some(self.pairs.values().map(|o| o.p_single).sum::<f64>() / self.pairs.len() as f64)
    }

    pub fn success_rate(&self) -> Option<f64> {
        if self.pairs.is_empty() {
            return None;
        }
        Some(self.pairs.values().filter(|o| o.success).count() as f64 / self.pairs.len() as f64)
    }
}

/// Recomputes densities for every CAV and draws an outcome for each CAV
/// leader-follower pair, in the given pair order.
pub fn update_comm<R: Rng + ?Sized>(
    vehicles: &[VehicleState],
    pairs: &[CommPair],
    t: f64,
    params: &CommParams,
    coeffs: &CommCoefficients,
    mode: CommMode,
    rng: &mut R,
) -> CommSnapshot {
    let mut snap = CommSnapshot { time: t, ..Default::default() };
    let mut cavs: Vec<&VehicleState> = vehicles.iter().filter(|v| v.class == VehicleClass::Cav).collect();
    if cavs.is_empty() {
        return snap;
    }
    cavs.sort_by(|a, b| a.position.total_cmp(&b.position));
    let positions: Vec<f64> = cavs.iter().map(|v| v.position).collect();
    let dens = densities_sorted(&positions, &positions, params.phi);
    for (v, d) in cavs.iter().zip(dens) {
        snap.density.insert(v.id, (d, params.xi(d)));
    }
    for pair in pairs {
        let Some(&(delta, _)) = snap.density.get(&pair.follower) else {
            continue;
        };
        let rec = reception_detail(pair.distance.max(0.0), delta, params.phi, params.f, coeffs);
        snap.xi_cap_hits += rec.xi_capped as u64;
        snap.p_clamp_hits += rec.p_clamped as u64;
        let success = match mode {
            CommMode::Model => transmission_success(rec.p, params.attempts, rng),
            CommMode::AlwaysOn => true,
            CommMode::AlwaysOff => false,
        };
        snap.pairs.insert(
            pair.follower,
            PairOutcome { leader: pair.leader, distance: pair.distance, p_single: rec.p, success },
        );
    }
    snap
}
