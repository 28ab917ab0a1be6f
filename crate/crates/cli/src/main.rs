mod commands;
mod config;

use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(m: impl Display) -> Self {
        Self { code: 1, message: m.to_string() }
    }

    pub fn runtime(m: impl Display) -> Self {
        Self { code: 2, message: m.to_string() }
    }
}

impl From<flatnas::Error> for CliError {
    fn from(e: flatnas::Error) -> Self {
        use flatnas::Error::*;
        match e {
            InvalidParameter(_) | InfeasibleConfig(_) | Parse(_) | UnknownSplit(_) | EnumerationCapExceeded { .. } => {
                Self::usage(e)
            }
            other => Self::runtime(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e)
    }
}

#[derive(Parser, Debug)]
#[command(name = "flatnas", version, about = "Flatness-based neural architecture search at desk scale")]
struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every random stream is derived from it
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum concurrent evaluations
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Search metric: flatness, accuracy, neg_loss, angle or combined
    #[arg(long, global = true)]
    metric: Option<String>,
    /// Weight of the flatness term in the combined metric
    #[arg(long, global = true, allow_negative_numbers = true)]
    gamma: Option<f64>,
    /// Weight of the depth term in the flatness score
    #[arg(long, global = true, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Comma-separated perturbation scales
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    sigmas: Option<Vec<f64>>,
    /// Search space preset
    #[arg(long, global = true, value_parser = ["micro", "nano201"])]
    preset: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset
    GenData {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the weight-sharing supernet with single-path sampling
    TrainSupernet {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evolutionary search scored on the trained supernet
    Search {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train architectures from scratch into a ground-truth table (resumable)
    Oracle {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Stop after training this many new entries
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Kendall's tau between a score file and the ground-truth table
    Tau {
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Allow the table to hold genotypes absent from the scores
        #[arg(long)]
        subset: bool,
    },
    /// Mean validation loss along random rays for one architecture
    Profile {
        /// Genotype string such as "skip|relu_linear|relu_linear", or "best"
        #[arg(long)]
        genotype: String,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Tau against the oracle for each value of one parameter
    Sweep {
        /// alpha, gamma or sigma_grid
        #[arg(long)]
        param: String,
        /// Comma-separated values; sigma grids are names or colon-separated scales
        #[arg(long)]
        values: String,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        metric: cli.metric.clone(),
        gamma: cli.gamma,
        alpha: cli.alpha,
        // for `profile` the grid is the profile's own, which may include zero
        sigmas: if matches!(cli.command, Command::Profile { .. }) { None } else { cli.sigmas.clone() },
        preset: cli.preset.clone(),
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if cli.jobs == 0 {
        return Err(CliError::usage("--jobs must be >= 1"));
    }
    println!("config_digest {}", cfg.digest());
    std::fs::create_dir_all(&cfg.output_dir)?;
    let jobs = cli.jobs;
    match cli.command {
        Command::GenData { data } => commands::gen_data(&cfg, data),
        Command::TrainSupernet { data, checkpoint } => commands::train_supernet(&cfg, data, checkpoint),
        Command::Search { data, checkpoint } => commands::search(&cfg, data, checkpoint, jobs),
        Command::Oracle { data, truth, limit } => commands::oracle(&cfg, data, truth, limit, jobs),
        Command::Tau { scores, truth, subset } => commands::tau(&cfg, scores, truth, subset),
        Command::Profile { genotype, data, checkpoint, replicates } => {
            commands::profile(&cfg, &genotype, data, checkpoint, cli.sigmas, replicates)
        }
        Command::Sweep { param, values, data, checkpoint, truth } => {
            commands::sweep(&cfg, &param, &values, data, checkpoint, truth, jobs)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
