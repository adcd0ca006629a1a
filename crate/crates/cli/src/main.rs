use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cavlane_sweep::{
    default_cells, hash_mismatches, load_config, policy_grid, run_sweep, Cell, Manifest, SweepSection, SweepSpec,
    CONFIG_ENV, MANIFEST_JSON,
};
use cavlane_core::{Policy, Scenario};
use clap::{Args, Parser, Subcommand};

/// Mixed HV/CAV freeway simulator with managed-lane policies.
#[derive(Debug, Parser)]
#[command(name = "cavlane", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a (policy, MPR) sweep; by default every policy over its full MPR grid.
    Sweep(SweepArgs),
    /// Re-run the sweep recorded in a manifest and compare result hashes.
    Rerun(RerunArgs),
    /// Print the effective scenario as TOML.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Scenario file (TOML); falls back to $CAVLANE_CONFIG, then built-in defaults.
    #[arg(long, short, env = CONFIG_ENV)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Scenario file (TOML); falls back to $CAVLANE_CONFIG, then built-in defaults.
    #[arg(long, short, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Policies to run (NML, CAV1, CAV2); repeat or comma-separate.
    #[arg(long, short, value_delimiter = ',')]
    policy: Vec<Policy>,
    /// Market penetration rates in [0, 1]; each must satisfy the policy minimum.
    #[arg(long, short, value_delimiter = ',')]
    mpr: Vec<f64>,
    /// Replication seeds; defaults to `replications` seeds from the configured seed.
    #[arg(long, short, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Worker threads.
    #[arg(long, short, default_value_t = default_workers())]
    workers: usize,
    /// Output directory.
    #[arg(long, short, default_value = "results")]
    out: PathBuf,
    /// Suppress per-run progress lines.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct RerunArgs {
    /// Manifest written by a previous sweep.
    manifest: PathBuf,
    /// Output directory for the rerun; defaults to the original one suffixed with `-rerun`.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, short, default_value_t = default_workers())]
    workers: usize,
    /// Suppress per-run progress lines.
    #[arg(long, short)]
    quiet: bool,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn scenario_from(path: Option<&PathBuf>) -> Result<(Scenario, SweepSection)> {
    match path {
        Some(p) => load_config(p),
        None => Ok((Scenario::default(), SweepSection::default())),
    }
}

fn cells(policies: &[Policy], mprs: &[f64]) -> Vec<Cell> {
    if policies.is_empty() && mprs.is_empty() {
        return default_cells();
    }
    let policies = if policies.is_empty() { Policy::ALL.to_vec() } else { policies.to_vec() };
    let mut out = Vec::new();
    for p in policies {
        if mprs.is_empty() {
            out.extend(policy_grid(p).into_iter().map(|m| Cell::new(p, m)));
        } else {
            out.extend(mprs.iter().map(|&m| Cell::new(p, m)));
        }
    }
    out
}

fn report(manifest: &Manifest, summary_dir: &std::path::Path) -> bool {
    let failed: Vec<_> = manifest.failures().collect();
    println!(
        "{} runs, {} failed; outputs in {} (manifest {})",
        manifest.runs.len(),
        failed.len(),
        summary_dir.display(),
        MANIFEST_JSON
    );
    for f in &failed {
        println!("  FAILED {} seed {}: {}", Cell::new(f.policy, f.mpr), f.seed, f.error.as_deref().unwrap_or("?"));
    }
    failed.is_empty()
}

fn sweep(args: SweepArgs) -> Result<bool> {
    let (scenario, section) = scenario_from(args.config.as_ref())?;
    let policies = if args.policy.is_empty() { section.policies.unwrap_or_default() } else { args.policy };
    let mprs = if args.mpr.is_empty() { section.mpr.unwrap_or_default() } else { args.mpr };
    let seeds = if !args.seeds.is_empty() {
        args.seeds
    } else {
        section.seeds.unwrap_or_else(|| SweepSpec::default_seeds(&scenario))
    };
    let spec = SweepSpec::new(scenario, cells(&policies, &mprs), seeds, args.out)?;
    eprintln!("{} cells x {} seeds = {} runs on {} workers", spec.cells.len(), spec.seeds.len(), spec.runs(), args.workers);
    let rep = run_sweep(&spec, args.workers, args.quiet)?;
    Ok(report(&rep.manifest, &spec.out))
}

fn rerun(args: RerunArgs) -> Result<bool> {
    let original = Manifest::load(&args.manifest)?;
    let mut spec = original.spec().context("manifest does not describe a valid sweep")?;
    spec.out = match args.out {
        Some(o) => o,
        None => {
            let mut name = spec.out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
            name.push("-rerun");
            spec.out.with_file_name(name)
        }
    };
    if spec.out == original.out {
        bail!("rerun output directory must differ from the original");
    }
    let rep = run_sweep(&spec, args.workers, args.quiet)?;
    let ok = report(&rep.manifest, &spec.out);
    let diff = hash_mismatches(&original, &rep.manifest);
    if diff.is_empty() {
        println!("all {} result hashes identical", original.runs.len());
    } else {
        for (cell, seed) in &diff {
            println!("  HASH MISMATCH {cell} seed {seed}");
        }
    }
    Ok(ok && diff.is_empty())
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Rerun(a) => rerun(a),
        Command::Config(a) => scenario_from(a.config.as_ref()).map(|(s, _)| {
            print!("{}", s.to_toml_string());
            true
        }),
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    const TINY: &str = "[config]\nwarmup_duration = 20.0\nmeasured_duration = 40.0\n";

    fn cli<I: IntoIterator<Item = S>, S: Into<std::ffi::OsString> + Clone>(args: I) -> Cli {
        Cli::try_parse_from(std::iter::once("cavlane".into()).chain(args.into_iter().map(Into::into))).unwrap()
    }

    #[test]
    fn sweep_table_then_rerun() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("tiny.toml");
        fs::write(&cfg, format!("{TINY}\n[sweep]\npolicies = [\"CAV2\"]\nmpr = [0.4, 0.8]\nseeds = [1]\n")).unwrap();
        let out = dir.path().join("res");
        let args = ["sweep", "--quiet", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        assert!(execute(cli(args)).unwrap());
        let manifest = out.join(MANIFEST_JSON);
        let m = Manifest::load(&manifest).unwrap();
        assert_eq!(m.runs.len(), 2);
        assert!(m.cells.iter().all(|c| c.policy == Policy::Cav2));

        assert!(execute(cli(["rerun", "--quiet", manifest.to_str().unwrap()])).unwrap());
        let again = Manifest::load(&dir.path().join("res-rerun").join(MANIFEST_JSON)).unwrap();
        assert!(hash_mismatches(&m, &again).is_empty());
    }

    #[test]
    fn failed_runs_and_invalid_cells() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("tiny.toml");
        fs::write(&cfg, TINY).unwrap();
        let out = dir.path().join("res");
        fs::create_dir_all(out.join("NML_000")).unwrap();
        fs::write(out.join("NML_000").join("seed_9"), "").unwrap();
        let (cfg, out) = (cfg.to_str().unwrap(), out.to_str().unwrap());
        let args = ["sweep", "-q", "--policy", "NML", "--mpr", "0", "--seeds", "8,9", "--config", cfg, "--out", out];
        assert!(!execute(cli(args)).unwrap());

        let err = execute(cli(["sweep", "--policy", "CAV2", "--mpr", "0.2", "--config", cfg])).unwrap_err();
        assert!(format!("{err:#}").contains("mpr below policy minimum"));
    }

    #[test]
    fn default_config_round_trips() {
        let (s, section) = scenario_from(None).unwrap();
        assert_eq!(Scenario::from_toml_str(&s.to_toml_string()).unwrap(), Scenario::default());
        assert!(section.policies.is_none() && section.seeds.is_none());
    }
}
