//! `lip3d`: synthetic corpus generation, preprocessing, training, evaluation
//! and analysis of 3D lip-motion speaker recognition.

mod commands;
pub mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "lip3d", version, about = "3D lip-motion speaker recognition")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration file (unknown keys are rejected).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed given in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; its parent must exist.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Progress messages on stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    Gen,
    /// Posture-correct a dataset into a 28 × 200 × 3 sequence store.
    Preprocess {
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Lip landmark index file; overrides the configuration.
        #[arg(long)]
        index_map: Option<PathBuf>,
    },
    /// Train one model and save a checkpoint with its run report.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
    },
    /// Four-mode ablation over seeds and both split kinds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Text-versus-speaker motion variance analysis.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Fluctuation prior heatmap of the training split.
    PlotPrior {
        #[arg(long)]
        data: PathBuf,
        /// Also draw the learned gate of this checkpoint.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

/// Configuration and invocation problems exit with 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl From<lip3d::Error> for CliError {
    fn from(e: lip3d::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Parses `std::env::args`, runs the subcommand and maps the outcome to an
/// exit code.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Gen => commands::gen(&cli.common),
        Command::Preprocess { data, index_map } => commands::preprocess(&cli.common, &data, index_map),
        Command::Train { data } => commands::train(&cli.common, &data),
        Command::Eval { data, model } => commands::eval(&cli.common, &data, &model),
        Command::Ablate { data } => commands::ablate(&cli.common, &data),
        Command::Stats { data } => commands::stats(&cli.common, &data),
        Command::PlotPrior { data, model } => commands::plot_prior(&cli.common, &data, model.as_deref()),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(CliError::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
