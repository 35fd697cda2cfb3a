//! Command-line front end.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::harness::{self, ExperimentConfig, SweepResult};
use crate::hierarchy::{self, AggregationTree};
use crate::rng::{stream, tag};
use crate::topology::{self, NetworkTopology};
use crate::validate;

#[derive(Debug, Parser)]
#[command(name = "msense", version, about = "Multi-scale spectrum sensing simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// TOML experiment config; built-in desk defaults when omitted.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Output file.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Override a config entry, e.g. `--set tree.gamma_delay=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an aggregation tree for the first trial's topology.
    BuildTree {
        #[command(flatten)]
        common: Common,
        /// Random-association tree instead of the interference-matched one.
        #[arg(long)]
        random: bool,
    },
    /// Run the configured schemes and write one CSV row per trial.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Like `simulate`, running the cost sweep when configured, and also
    /// writing a trial-averaged summary next to the output.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Run the fast oracle checks.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Harness(harness::HarnessError::Config(_)) => 2,
            _ => 1,
        }
    }
}

/// Sets `key` (dot-separated path) to `raw`, parsed as a TOML value when
/// possible and as a string otherwise.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::try_from(ExperimentConfig::desk_default()).map_err(|e| CliError::Config(e.to_string()))?,
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct TreeFile<'a> {
    topology: &'a NetworkTopology,
    tree: &'a AggregationTree,
}

fn output(out: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_rows<T: Serialize>(rows: &[T], w: impl Write) -> Result<(), CliError> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_summary.csv"))
}

fn print_summary(cfg: &ExperimentConfig, res: &SweepResult) {
    eprintln!("{:<14} {:>10} {:>12} {:>12} {:>10}", "scheme", "cost", "point", "throughput", "INR dB");
    for s in res.summary(cfg.seed) {
        let cost = s.cost_param.map_or("-".to_string(), |c| format!("{c:.4}"));
        eprintln!(
            "{:<14} {:>10} {:>12.4e} {:>12.5} {:>10.2}",
            s.scheme, cost, s.lambda_or_ptx, s.mean_su_throughput, s.mean_inr_db
        );
    }
}

pub fn build_tree_cmd(common: &Common, random: bool) -> Result<(), CliError> {
    let cfg = load_config(common.config.as_deref(), &common.overrides)?;
    let seed = crate::rng::derive_seed(cfg.seed, &[0]);
    let topo = topology::build_topology(&cfg.topology, &mut stream(cfg.seed, &[0, tag::TOPOLOGY]), seed)
        .map_err(harness::HarnessError::from)?;
    let phi = topology::compute_phi(&topo, &cfg.pathloss).map_err(harness::HarnessError::from)?;
    let model = cfg.occupancy.model().map_err(harness::HarnessError::from)?;
    let params = hierarchy::TreeParams {
        gamma_delay: cfg.tree.gamma_delay,
        c_max: cfg.tree.c_max.unwrap_or(f64::INFINITY),
    };
    let tree = if random {
        hierarchy::build_random_tree(&topo, &params, &mut stream(cfg.seed, &[0, tag::TREE, 0]))
    } else {
        hierarchy::build_ibt(&topo, &phi, model.mu, &params)
    }
    .map_err(harness::HarnessError::from)?;

    let mut w = output(common.out.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &TreeFile { topology: &topo, tree: &tree }).map_err(io::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    eprintln!("depth: {}", tree.depth());
    eprintln!("cost per cell: {}", tree.cost_per_cell());
    eprintln!("max delay: {}", tree.max_delay());
    for l in 0..=tree.depth() {
        eprintln!("level {l}: cluster sizes {:?}", tree.cluster_sizes(l));
    }
    Ok(())
}

pub fn simulate_cmd(common: &Common, sweep: bool) -> Result<(), CliError> {
    let cfg = load_config(common.config.as_deref(), &common.overrides)?;
    let res = if sweep && cfg.cost_sweep.is_some() {
        harness::run_cost_sweep(&cfg)?
    } else {
        harness::run_experiment(&cfg)?
    };
    write_rows(&res.rows, output(common.out.as_deref())?)?;
    if sweep {
        let summary = res.summary(cfg.seed);
        match &common.out {
            Some(p) => write_rows(&summary, io::BufWriter::new(fs::File::create(summary_path(p))?))?,
            None => write_rows(&summary, io::stdout().lock())?,
        }
    }
    print_summary(&cfg, &res);
    Ok(())
}

pub fn validate_cmd(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common.config.as_deref(), &common.overrides)?;
    let model = cfg.occupancy.model().map_err(harness::HarnessError::from)?;
    let checks = validate::run_all(&model, cfg.seed);
    let mut w = output(common.out.as_deref())?;
    for c in &checks {
        writeln!(
            w,
            "{} {:<38} max deviation {:.3e} (tolerance {:.1e}; {})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.max_deviation,
            c.tolerance,
            c.detail
        )?;
    }
    w.flush()?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::ChecksFailed(failed));
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::BuildTree { common, random } => build_tree_cmd(common, *random),
        Command::Simulate { common } => simulate_cmd(common, false),
        Command::Sweep { common } => simulate_cmd(common, true),
        Command::Validate { common } => validate_cmd(common),
    }
}
