//! `vig`: train, evaluate and inspect graph-based image encoders.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage or config error.

mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vig_core::VigError;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<VigError> for CliError {
    fn from(e: VigError) -> Self {
        match e {
            VigError::Config(_) | VigError::Usage(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "vig", version, about = "Graph-based vision encoder for multispectral image classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a run configuration.
    Train {
        config: PathBuf,
        /// Seed for initialization and batch order (overrides [train] seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides [output] dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on one split of a dataset.
    Evaluate {
        checkpoint: PathBuf,
        manifest: PathBuf,
        #[arg(long, default_value = "test", value_parser = ["train", "val", "test", "all"])]
        split: String,
        /// Decision threshold for multilabel scores.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        /// Report directory (defaults to the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the KNN graph of one stage for one sample as an edge list.
    InspectGraph {
        checkpoint: PathBuf,
        sample: PathBuf,
        /// Stage 1, 2 or 3.
        #[arg(long, default_value_t = 1)]
        stage: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset and print its manifest path.
    Synth {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        per_class: usize,
        /// Channels (bands).
        #[arg(long = "c")]
        channels: usize,
        /// Height and width.
        #[arg(long)]
        hw: usize,
        #[arg(long)]
        multilabel: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean and standard deviation of run metrics across output directories.
    Aggregate {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, seed, out } => commands::train(&config, seed, out),
        Command::Evaluate {
            checkpoint,
            manifest,
            split,
            threshold,
            out,
        } => commands::evaluate(&checkpoint, &manifest, &split, threshold, out),
        Command::InspectGraph {
            checkpoint,
            sample,
            stage,
            out,
        } => commands::inspect_graph(&checkpoint, &sample, stage, &out),
        Command::Synth {
            classes,
            per_class,
            channels,
            hw,
            multilabel,
            seed,
            out,
        } => commands::synth(classes, per_class, channels, hw, multilabel, seed, &out),
        Command::Aggregate { dirs, out } => commands::aggregate(&dirs, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
