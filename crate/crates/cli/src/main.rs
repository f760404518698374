//! `trackmarket`: tracker market-concentration analysis from the command line.
//!
//! Data goes to stdout (or `--out`); diagnostics go to stderr. Exit status is
//! 0 on success, 2 for invalid input or configuration, and 3 when the
//! requested market turns out to be empty.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::CommonArgs;

#[derive(Debug, Parser)]
#[command(
    name = "trackmarket",
    version,
    about = "Tracker market-concentration toolkit"
)]
struct Cli {
    /// TOML file with default settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize a raw crawl or app-analysis export into observation records.
    Ingest(commands::IngestArgs),
    /// Per-entity prevalence, prominence, ISH and PROWISH.
    Metrics(commands::MetricsArgs),
    /// Concentration grid: ISH- and PROWISH-HHI per market and level.
    Hhi(commands::HhiArgs),
    /// HHI change if subsidiaries were independent of their parent.
    SimulateMerger(commands::MergerArgs),
    /// Tracker overlap between equivalent websites and apps.
    Overlap(commands::OverlapArgs),
    /// Compare the trackers two detection methods found on the same apps.
    CompareMethods(commands::CompareArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Ingest(a) => &a.common,
            Command::Metrics(a) => &a.common,
            Command::Hhi(a) => &a.common,
            Command::SimulateMerger(a) => &a.common,
            Command::Overlap(a) => &a.common,
            Command::CompareMethods(a) => &a.common,
        }
    }
}

const EXIT_INPUT: u8 = 2;
const EXIT_EMPTY: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    let empty = err
        .chain()
        .filter_map(|e| e.downcast_ref::<trackmarket::Error>())
        .any(trackmarket::Error::is_empty_result);
    if empty {
        EXIT_EMPTY
    } else {
        EXIT_INPUT
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        anyhow::ensure!(n >= 1, "--threads must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    let file = match &cli.config {
        Some(p) => config::RunConfig::load(p)?,
        None => config::RunConfig::default(),
    };
    let settings = config::Settings::resolve(file, cli.command.common())?;
    match &cli.command {
        Command::Ingest(a) => commands::ingest(a, &settings),
        Command::Metrics(a) => commands::metrics(a, &settings),
        Command::Hhi(a) => commands::hhi(a, &settings),
        Command::SimulateMerger(a) => commands::simulate_merger(a, &settings),
        Command::Overlap(a) => commands::overlap(a, &settings),
        Command::CompareMethods(a) => commands::compare_methods(a, &settings),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
