//! `metrix`: generate data, train, ablate and inspect loss positivity.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use metrix::mixup::MixupType;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] metrix::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for bad input, 3 for numeric failure during a run, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        use metrix::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(
                E::InvalidArgument(_)
                | E::Infeasible(_)
                | E::Parse { .. }
                | E::DimMismatch { .. }
                | E::LabelRange(_),
            ) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "metrix",
    version,
    about = "Deep metric learning with label-interpolated mixup"
)]
struct Cli {
    /// Base directory for every file read from a config or written by a command.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// Hard negatives per anchor (sets both input and manifold limits).
    K,
    Pairs,
    Mixtype,
    W,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a Gaussian-cluster dataset and its class split.
    GenData {
        #[arg(long, default_value_t = 32)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 0.35)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        center_scale: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train one model and write metrics, checkpoints and a run summary.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Sweep one mixup setting against a no-mixup baseline.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated; pair policies and mixup types combine with `+`.
        #[arg(long)]
        values: String,
        /// Runs per value on consecutive seeds, averaged.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Fraction of mixed instances acting as positives, per interpolation factor.
    Positivity {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `start:end:step`
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        mix_type: Option<MixupType>,
    },
}

fn load(path: Option<&Path>) -> Result<config::ExperimentConfig, CliError> {
    let cfg = match path {
        Some(p) => config::ExperimentConfig::load(p)?,
        None => config::ExperimentConfig::default(),
    };
    cfg.with_env_seed()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData {
            classes,
            per_class,
            dim,
            sigma,
            center_scale,
            seed,
        } => commands::gen_data(
            &cli.out,
            &metrix::data::GaussianSpec {
                classes,
                per_class,
                dim,
                center_scale,
                sigma,
                seed,
            },
        ),
        Command::Train { config } => commands::train(&cli.out, &load(config.as_deref())?),
        Command::Ablate {
            config,
            axis,
            values,
            repeats,
        } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(r) = repeats {
                cfg.ablate.repeats = r;
            }
            commands::ablate(&cli.out, &cfg, axis, &values)
        }
        Command::Positivity {
            config,
            grid,
            n,
            mix_type,
        } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(g) = grid {
                cfg.positivity.grid = g;
            }
            if let Some(n) = n {
                cfg.positivity.n = n;
            }
            if let Some(t) = mix_type {
                cfg.positivity.mix_type = t;
            }
            commands::positivity(&cli.out, &cfg)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
