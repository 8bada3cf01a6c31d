use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use staggered_ife::simulate::{run_monte_carlo, table1_configs, table2_configs, write_table, McResult, SimConfig};

use crate::report::{read_input, sha256_hex, OutputDir, RunManifest, MANIFEST};
use crate::{CliResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Truth designs with -1, 0, 1 and 2 interactive effects.
    Table1,
    /// One true factor with shrinking loading separation.
    Table2,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// JSON file mirroring the simulation configuration.
    #[arg(long, required_unless_present = "preset", conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Replications per design; overrides the config.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Base seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Column<'a> {
    label: &'a str,
    result: &'a McResult,
}

#[derive(Serialize)]
struct Archive<'a> {
    manifest: &'static str,
    columns: Vec<Column<'a>>,
}

/// Labelled designs plus the config file digest, if one was read.
type Designs = (Vec<(String, SimConfig)>, Option<String>);

fn designs(args: &SimulateArgs) -> CliResult<Designs> {
    if let Some(preset) = args.preset {
        let reps = args.reps.unwrap_or(SimConfig::default().reps);
        let seed = args.seed.unwrap_or(0);
        let configs = match preset {
            Preset::Table1 => table1_configs(reps, seed),
            Preset::Table2 => table2_configs(reps, seed),
        };
        return Ok((configs, None));
    }
    let path = args.config.as_ref().expect("clap requires --config or --preset");
    let raw = read_input(path)?;
    let mut cfg: SimConfig = serde_json::from_slice(&raw)
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let label = format!("{} IFE", cfg.truth_ife.code());
    Ok((vec![(label, cfg)], Some(sha256_hex(&raw))))
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let (configs, digest) = designs(args)?;
    for (_, cfg) in &configs {
        cfg.validate()?;
    }
    let mut columns = Vec::with_capacity(configs.len());
    for (label, cfg) in &configs {
        log::info!("design {label}: {} replications", cfg.reps);
        columns.push((label.clone(), run_monte_carlo(cfg)?));
    }
    let mut table = Vec::new();
    write_table(&columns, &mut table)?;
    let failures: usize = columns.iter().flat_map(|(_, r)| &r.rows).map(|r| r.failures).sum();
    if failures > 0 {
        log::warn!("{failures} replication(s) failed across all designs; see runs.json");
    }

    let mut out = OutputDir::new(&args.out);
    out.write("table.csv", &table)?;
    let archive =
        Archive { manifest: MANIFEST, columns: columns.iter().map(|(label, result)| Column { label, result }).collect() };
    out.write_json("runs.json", &archive)?;
    let seeds = configs.iter().map(|(_, c)| c.seed).collect();
    out.finish(RunManifest::new("simulate", args, digest, seeds))?;
    print!("{}", String::from_utf8_lossy(&table));
    Ok(())
}
