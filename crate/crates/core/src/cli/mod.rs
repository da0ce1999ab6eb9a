//! Command-line front end.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

pub use config::{LayersChoice, RunConfig, RunOptions, StrategyChoice};

#[derive(Debug, Parser)]
#[command(name = "svc-modesel", version, about = "Fast SVC mode decision benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic Y4M sequence.
    Synth {
        #[arg(long, default_value = "mixed")]
        pattern: String,
        #[arg(long, default_value = "cif")]
        size: String,
        #[arg(long, default_value_t = config::DEFAULT_FRAMES)]
        frames: usize,
        #[arg(long, default_value_t = config::DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode once per QP and write JSON reports and RD points.
    Encode(WithConfig),
    /// Run both strategies over a QP list and tabulate the difference.
    Compare(WithConfig),
    /// BD-PSNR and BD-rate between two RD CSV files.
    Bd { reference: PathBuf, test: PathBuf },
    /// Dump per-macroblock classes of the full-resolution layer.
    ClassifyMap(WithConfig),
}

#[derive(Debug, clap::Args)]
pub struct WithConfig {
    /// JSON file with default values for any of the options below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub options: RunOptions,
}

impl WithConfig {
    pub fn merged(self) -> Result<RunOptions> {
        Ok(match &self.config {
            Some(path) => self.options.over(RunOptions::from_file(path)?),
            None => self.options,
        })
    }
}

/// Runs a parsed command line, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<()> {
    match cli.command {
        Command::Synth {
            pattern,
            size,
            frames,
            seed,
            out: path,
        } => commands::cmd_synth(&pattern, &size, frames, seed, &path, out),
        Command::Encode(c) => commands::cmd_encode(&RunConfig::resolve(c.merged()?, &[crate::encoder::QpTriple::DEFAULTS[2]])?, out),
        Command::Compare(c) => commands::cmd_compare(&RunConfig::resolve(c.merged()?, &crate::encoder::QpTriple::DEFAULTS)?, out),
        Command::Bd { reference, test } => commands::cmd_bd(&reference, &test, out),
        Command::ClassifyMap(c) => commands::cmd_classify_map(&RunConfig::resolve(c.merged()?, &[crate::encoder::QpTriple::DEFAULTS[2]])?, out),
    }
}
