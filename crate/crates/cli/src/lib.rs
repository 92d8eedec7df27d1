//! Command-line front end: configuration, file formats and the experiment
//! commands (simulate, build-map, lcd, wakeup, eval, bench, replay).
//!
//! Environment: `TOPOLOC_THREADS` caps the worker pool, `TOPOLOC_VERBOSITY=0`
//! silences the one-line summaries on stdout.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{execute, replay, resolve_scenario, Invocation, NamedResults};
use crate::config::Config;
pub use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "topoloc", version, about = "Topometric localization experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a built-in scenario into reference and query traverses.
    Simulate {
        /// S1, S2 or S3 (default: [scenario] name in the config).
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Subsample a reference traverse into a topometric map.
    BuildMap {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Loop closure detection over a whole query.
    Lcd {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Decide on filtered instead of smoothed beliefs.
        #[arg(long)]
        forward_only: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Global localization trials from random starting frames.
    Wakeup {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score results files against ground truth.
    Eval {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        query: PathBuf,
        /// `name=path` to a results.jsonl; repeat for several runs.
        #[arg(long = "results", required = true)]
        results: Vec<NamedResults>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Time the motion, measurement, forward and backward stages.
    Bench {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Passes over the query.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        /// Also write the report as JSON here.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Re-run a recorded command and check its outputs are byte-identical.
    Replay {
        manifest: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

/// Caps the worker pool from `TOPOLOC_THREADS`; a no-op when unset.
pub fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("TOPOLOC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| CliError::Config(format!("TOPOLOC_THREADS must be a positive integer, got {v:?}")))?;
    // a pool may already exist when the library is driven in-process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn verbose() -> bool {
    std::env::var("TOPOLOC_VERBOSITY").map_or(true, |v| v != "0")
}

/// Runs one command; returns the summary to print.
pub fn run(cli: Cli) -> CliResult<String> {
    let load = |p: &Option<PathBuf>| Config::load_or_default(p.as_deref());
    let (inv, config, out, force) = match cli.command {
        Command::Simulate { scenario, seed, config, out, force } => {
            let mut cfg = load(&config)?;
            let (scenario, seed) = resolve_scenario(scenario, seed, &cfg)?;
            cfg.scenario.name = Some(scenario.clone());
            cfg.scenario.seed = Some(seed);
            (Invocation::Simulate { scenario, seed }, cfg, out, force)
        }
        Command::BuildMap { reference, config, out } => (Invocation::BuildMap { reference }, load(&config)?, out, false),
        Command::Lcd { map, query, config, forward_only, out } => {
            let mut cfg = load(&config)?;
            cfg.task.forward_only |= forward_only;
            (Invocation::Lcd { map, query }, cfg, out, false)
        }
        Command::Wakeup { map, query, config, out } => (Invocation::Wakeup { map, query }, load(&config)?, out, false),
        Command::Eval { map, query, results, config, out } => {
            (Invocation::Eval { map, query, results }, load(&config)?, out, false)
        }
        Command::Bench { map, query, config, repeats, out } => {
            let cfg = load(&config)?;
            let m = formats::read_map(&map)?;
            let q = formats::read_traverse(&query)?;
            let report = bench::bench(&m, &q, &cfg.localizer(), repeats)?;
            if let Some(path) = out {
                formats::write_json(&path, &report)?;
            }
            return Ok(report.table().trim_end().to_string());
        }
        Command::Replay { manifest, out, force } => {
            let o = replay(&manifest, &out, force)?;
            return Ok(format!("replay into {}: {}", o.out_dir.display(), o.message));
        }
    };
    let name = inv.name();
    let o = execute(inv, &config, &out, force)?;
    Ok(format!("{name} -> {}: {}", o.out_dir.display(), o.message))
}
