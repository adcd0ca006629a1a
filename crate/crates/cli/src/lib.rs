//! Scenario sweeps: the (policy, MPR) grid, replication seeds, per-run
//! output directories, per-cell analyses and the rerun manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use cavlane_core::io::{self, SCHEMA_VERSION};
use cavlane_core::metrics::{self, analyze_cell};
use cavlane_core::{run_replication, Policy, RawResults, Scenario, VtMicroCoefficients};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_JSON: &str = "manifest.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const ANALYSIS_DIR: &str = "analysis";

/// Environment variable naming the default scenario file.
pub const CONFIG_ENV: &str = "CAVLANE_CONFIG";

/// One (policy, MPR) combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub policy: Policy,
    pub mpr: f64,
}

impl Cell {
    pub fn new(policy: Policy, mpr: f64) -> Self {
        Self { policy, mpr }
    }

    /// Directory name, e.g. `CAV1_070`.
    pub fn dir_name(&self) -> String {
        format!("{}_{:03}", self.policy, (self.mpr * 100.0).round() as u32)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:.0}%", self.policy, self.mpr * 100.0)
    }
}

/// MPR grid of `policy` in 10% steps from its minimum up to 100%.
pub fn policy_grid(policy: Policy) -> Vec<f64> {
    let first = (policy.min_mpr() * 10.0).round() as u32;
    (first..=10).map(|k| k as f64 / 10.0).collect()
}

/// All policies over their default grids.
pub fn default_cells() -> Vec<Cell> {
    Policy::ALL.iter().flat_map(|&p| policy_grid(p).into_iter().map(move |m| Cell::new(p, m))).collect()
}

/// Optional `[sweep]` table of a scenario file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub policies: Option<Vec<Policy>>,
    pub mpr: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
}

/// Splits a scenario file into the scenario proper and its `[sweep]` table.
pub fn parse_config(text: &str) -> Result<(Scenario, SweepSection)> {
    let mut table: toml::Table = toml::from_str(text).context("scenario file is not valid TOML")?;
    let sweep = match table.remove("sweep") {
        Some(v) => v.try_into().context("invalid [sweep] table")?,
        None => SweepSection::default(),
    };
    let rest = toml::to_string(&table).expect("table serializes");
    let scenario = Scenario::from_toml_str(&rest).context("invalid scenario")?;
    Ok((scenario, sweep))
}

pub fn load_config(path: &Path) -> Result<(Scenario, SweepSection)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}

/// What a sweep runs: a base scenario, the cells, and the seeds each cell is
/// replicated with.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub scenario: Scenario,
    pub cells: Vec<Cell>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl SweepSpec {
    /// Checks every cell against the scenario's invariants.
    pub fn new(scenario: Scenario, cells: Vec<Cell>, seeds: Vec<u64>, out: PathBuf) -> Result<Self> {
        if cells.is_empty() {
            bail!("sweep has no cells");
        }
        if seeds.is_empty() {
            bail!("sweep has no seeds");
        }
        let mut problems = Vec::new();
        for c in &cells {
            if let Err(errs) = scenario.clone().with(c.policy, c.mpr, seeds[0]).validate() {
                for e in errs {
                    problems.push(format!("{c}: {e}"));
                }
            }
        }
        if !problems.is_empty() {
            bail!("invalid sweep:\n  {}", problems.join("\n  "));
        }
        Ok(Self { scenario, cells, seeds, out })
    }

    /// Default seeds: `replications` consecutive values from the configured seed.
    pub fn default_seeds(scenario: &Scenario) -> Vec<u64> {
        let c = &scenario.config;
        (0..c.replications as u64).map(|k| c.seed + k).collect()
    }

    pub fn runs(&self) -> usize {
        self.cells.len() * self.seeds.len()
    }

    pub fn scenario_toml(&self) -> String {
        self.scenario.to_toml_string()
    }

    /// SHA-256 of the serialized base scenario.
    pub fn config_hash(&self) -> String {
        hex(&Sha256::digest(self.scenario_toml().as_bytes()))
    }

    pub fn run_dir(&self, cell: Cell, seed: u64) -> PathBuf {
        self.out.join(cell.dir_name()).join(format!("seed_{seed}"))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Outcome of one replication as listed in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub policy: Policy,
    pub mpr: f64,
    pub seed: u64,
    pub dir: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub result_hash: Option<String>,
    pub seconds: f64,
}

/// Everything needed to reproduce a sweep exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub scenario: String,
    pub cells: Vec<Cell>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub runs: Vec<RunEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// The sweep this manifest records.
    pub fn spec(&self) -> Result<SweepSpec> {
        let scenario = Scenario::from_toml_str(&self.scenario).context("manifest scenario")?;
        let spec = SweepSpec::new(scenario, self.cells.clone(), self.seeds.clone(), self.out.clone())?;
        if spec.config_hash() != self.config_hash {
            bail!("manifest config hash does not match its scenario");
        }
        Ok(spec)
    }

    pub fn failures(&self) -> impl Iterator<Item = &RunEntry> {
        self.runs.iter().filter(|r| r.status == RunStatus::Failed)
    }

    /// Result hash per (cell directory, seed).
    pub fn hashes(&self) -> BTreeMap<(String, u64), Option<String>> {
        self.runs.iter().map(|r| ((Cell::new(r.policy, r.mpr).dir_name(), r.seed), r.result_hash.clone())).collect()
    }
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: Policy,
    pub mpr: f64,
    pub seed: u64,
    pub status: RunStatus,
    pub throughput_vph: Option<f64>,
    pub avg_delay_s: Option<f64>,
    pub avg_speed_kmh: Option<f64>,
    pub latent: Option<u64>,
    pub lane_changes: Option<u64>,
    pub min_gap: Option<f64>,
    pub comm_success: Option<f64>,
    pub result_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub manifest: Manifest,
    pub summary: Vec<SummaryRow>,
}

impl SweepReport {
    pub fn failed(&self) -> usize {
        self.manifest.failures().count()
    }
}

fn run_one(spec: &SweepSpec, cell: Cell, seed: u64, quiet: bool) -> (RunEntry, SummaryRow, Option<RawResults>) {
    let dir = spec.run_dir(cell, seed);
    let rel = dir.strip_prefix(&spec.out).unwrap_or(&dir).to_string_lossy().into_owned();
    let start = Instant::now();
    let outcome = (|| -> Result<RawResults> {
        let scn = spec.scenario.clone().with(cell.policy, cell.mpr, seed).validate().map_err(|errs| {
            anyhow::anyhow!(errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
        })?;
        let raw = run_replication(&scn, seed)?;
        io::write_raw(&dir, &raw)?;
        Ok(raw)
    })();
    let seconds = start.elapsed().as_secs_f64();
    let mut row = SummaryRow {
        policy: cell.policy,
        mpr: cell.mpr,
        seed,
        status: RunStatus::Failed,
        throughput_vph: None,
        avg_delay_s: None,
        avg_speed_kmh: None,
        latent: None,
        lane_changes: None,
        min_gap: None,
        comm_success: None,
        result_hash: None,
    };
    let entry = match &outcome {
        Ok(raw) => {
            let kpi = metrics::run_kpi(&raw.kpi);
            row.status = RunStatus::Ok;
            row.throughput_vph = kpi.as_ref().map(|k| k.throughput_vph);
            row.avg_delay_s = kpi.as_ref().map(|k| k.avg_delay_s);
            row.avg_speed_kmh = kpi.as_ref().map(|k| k.avg_speed_kmh);
            row.latent = Some(raw.summary.latent);
            row.lane_changes = Some(raw.summary.lane_changes);
            row.min_gap = Some(raw.summary.min_gap);
            row.comm_success = metrics::comm_kpis(&raw.comm).and_then(|c| c.success_rate);
            row.result_hash = Some(raw.summary.result_hash.clone());
            if !quiet {
                eprintln!("{cell} seed {seed}: ok in {seconds:.1} s");
            }
            RunEntry {
                policy: cell.policy,
                mpr: cell.mpr,
                seed,
                dir: rel,
                status: RunStatus::Ok,
                error: None,
                result_hash: Some(raw.summary.result_hash.clone()),
                seconds,
            }
        }
        Err(e) => {
            if !quiet {
                eprintln!("{cell} seed {seed}: FAILED: {e:#}");
            }
            RunEntry {
                policy: cell.policy,
                mpr: cell.mpr,
                seed,
                dir: rel,
                status: RunStatus::Failed,
                error: Some(format!("{e:#}")),
                result_hash: None,
                seconds,
            }
        }
    };
    (entry, row, outcome.ok())
}

/// Runs every (cell, seed) pair on `workers` threads, writes raw outputs,
/// per-cell analyses, `summary.csv` and the manifest into `spec.out`. A
/// failed run is recorded and does not stop the others.
pub fn run_sweep(spec: &SweepSpec, workers: usize, quiet: bool) -> Result<SweepReport> {
    fs::create_dir_all(&spec.out).with_context(|| format!("creating {}", spec.out.display()))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let fuel = VtMicroCoefficients::builtin();
    let origin = spec.scenario.config.warmup_duration;
    let lanes = spec.scenario.network.lane_count;
    let per_cell: Vec<Vec<(RunEntry, SummaryRow)>> = pool.install(|| {
        spec.cells
            .par_iter()
            .map(|&cell| {
                let results: Vec<_> = spec.seeds.par_iter().map(|&seed| run_one(spec, cell, seed, quiet)).collect();
                let raws: Vec<RawResults> = results.iter().filter_map(|r| r.2.clone()).collect();
                let mut out: Vec<(RunEntry, SummaryRow)> = results.into_iter().map(|(e, s, _)| (e, s)).collect();
                if !raws.is_empty() {
                    let analysis = analyze_cell(&raws, lanes, origin, &fuel);
                    let dir = spec.out.join(cell.dir_name()).join(ANALYSIS_DIR);
                    if let Err(e) = metrics::write_cell_analysis(&dir, &analysis) {
                        for (entry, row) in &mut out {
                            entry.status = RunStatus::Failed;
                            entry.error = Some(format!("writing analysis: {e}"));
                            row.status = RunStatus::Failed;
                        }
                    }
                }
                out
            })
            .collect()
    });
    let (runs, summary): (Vec<RunEntry>, Vec<SummaryRow>) = per_cell.into_iter().flatten().unzip();
    io::write_csv(&spec.out.join(SUMMARY_CSV), &summary)?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        schema_version: SCHEMA_VERSION,
        config_hash: spec.config_hash(),
        scenario: spec.scenario_toml(),
        cells: spec.cells.clone(),
        seeds: spec.seeds.clone(),
        out: spec.out.clone(),
        runs,
    };
    manifest.save(&spec.out.join(MANIFEST_JSON))?;
    Ok(SweepReport { manifest, summary })
}

/// Runs already on disk for `cell`, in seed order, skipping failed ones.
pub fn load_cell(manifest: &Manifest, cell: Cell) -> Result<Vec<RawResults>> {
    let name = cell.dir_name();
    let mut out = Vec::new();
    for r in &manifest.runs {
        if Cell::new(r.policy, r.mpr).dir_name() == name && r.status == RunStatus::Ok {
            out.push(io::read_raw(&manifest.out.join(&r.dir)).with_context(|| format!("reading {}", r.dir))?);
        }
    }
    Ok(out)
}

/// Runs whose result hashes differ between two manifests of the same sweep.
pub fn hash_mismatches(a: &Manifest, b: &Manifest) -> Vec<(String, u64)> {
    let hb = b.hashes();
    a.hashes()
        .into_iter()
        .filter(|(k, h)| h.is_none() || hb.get(k) != Some(h))
        .map(|(k, _)| k)
        .collect()
}
