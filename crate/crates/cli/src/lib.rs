//! Command-line front end: config loading, the subcommands and their
//! report formats. The binary in `main.rs` is a thin wrapper.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{HardwareArgs, SearchArgs};
pub use error::{exit, CliError, CliResult};
pub use report::{RunReport, SweepReport};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "LOOPSCHED_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "loopsched",
    version,
    about = "Loop-ordering scheduler for DNN accelerators"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find the best temporal mapping for one layer.
    Schedule {
        #[arg(long)]
        layer: PathBuf,
        #[command(flatten)]
        hw: HardwareArgs,
        #[command(flatten)]
        search: SearchArgs,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Schedule every distinct layer of a network once.
    Sweep {
        #[arg(long)]
        network: PathBuf,
        #[command(flatten)]
        hw: HardwareArgs,
        #[command(flatten)]
        search: SearchArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Objectives visited by annealing next to uniformly random orderings (CSV).
    Distribution {
        #[arg(long)]
        layer: PathBuf,
        #[command(flatten)]
        hw: HardwareArgs,
        #[arg(long, default_value_t = 1000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        lpf_limit: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the analytical counts against the loop-nest simulation.
    Validate {
        /// Directory of fixture files (searched recursively).
        #[arg(long, conflicts_with = "random", required_unless_present = "random")]
        fixtures: Option<PathBuf>,
        /// Number of random (layer, toy arch, ordering) cases.
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate the curated fixture files with oracle expectations.
    ExportFixtures {
        #[arg(long)]
        out: PathBuf,
    },
}
