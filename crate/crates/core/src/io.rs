//! CSV schemas of run and analysis outputs.
//!
//! Raw outputs of one replication, schema version [`SCHEMA_VERSION`]:
//!
//! | file | one row per | columns |
//! |------|-------------|---------|
//! | `detectors.csv` | detector crossing | detector, lane, vehicle, class, time, speed, accel, headway |
//! | `vehicles.csv` | vehicle that entered | id, class, origin, destination, rerouted, arrival_time, entry_time, exit_time, distance, desired_speed |
//! | `comm.csv` | 2 Hz update | time, cavs, mean_density, max_density, pairs, mean_reception, success_rate, xi_cap_hits, p_clamp_hits |
//! | `kpi.csv` | 5-minute interval | interval_start, interval_end, exited, present, latent, vkt, vht, delay |
//! | `summary.json` | run | [`RunSummary`] |
//!
//! Units are SI (m, s, m/s, m/s²) except densities (veh/km), `vkt` (km) and
//! `vht` (h). Empty cells are undefined values.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::engine::{CommRecord, DetectorRecord, KpiRecord, RawResults, VehicleRecord};

pub const SCHEMA_VERSION: u32 = 1;

pub const DETECTORS_CSV: &str = "detectors.csv";
pub const VEHICLES_CSV: &str = "vehicles.csv";
pub const COMM_CSV: &str = "comm.csv";
pub const KPI_CSV: &str = "kpi.csv";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("summary: {0}")]
    Json(String),
}

pub fn to_csv_string<T: Serialize>(rows: &[T]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IoError> {
    fs::write(path, to_csv_string(rows)?)?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// SHA-256 over the four raw CSV tables, in a fixed order.
pub fn results_hash(r: &RawResults) -> String {
    let mut h = Sha256::new();
    for text in [
        to_csv_string(&r.detectors),
        to_csv_string(&r.vehicles),
        to_csv_string(&r.comm),
        to_csv_string(&r.kpi),
    ] {
        let text = text.expect("records serialize");
        h.update((text.len() as u64).to_le_bytes());
        h.update(text.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes the raw outputs of one run into `dir`, creating it if needed.
pub fn write_raw(dir: &Path, r: &RawResults) -> Result<(), IoError> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join(DETECTORS_CSV), &r.detectors)?;
    write_csv(&dir.join(VEHICLES_CSV), &r.vehicles)?;
    write_csv(&dir.join(COMM_CSV), &r.comm)?;
    write_csv(&dir.join(KPI_CSV), &r.kpi)?;
    let summary = serde_json::to_string_pretty(&r.summary).map_err(|e| IoError::Json(e.to_string()))?;
    fs::write(dir.join(SUMMARY_JSON), summary + "\n")?;
    Ok(())
}

/// Reads back what [`write_raw`] wrote.
pub fn read_raw(dir: &Path) -> Result<RawResults, IoError> {
    let summary = fs::read_to_string(dir.join(SUMMARY_JSON))?;
    Ok(RawResults {
        summary: serde_json::from_str(&summary).map_err(|e| IoError::Json(e.to_string()))?,
        detectors: read_csv::<DetectorRecord>(&dir.join(DETECTORS_CSV))?,
        vehicles: read_csv::<VehicleRecord>(&dir.join(VEHICLES_CSV))?,
        comm: read_csv::<CommRecord>(&dir.join(COMM_CSV))?,
        kpi: read_csv::<KpiRecord>(&dir.join(KPI_CSV))?,
    })
}
