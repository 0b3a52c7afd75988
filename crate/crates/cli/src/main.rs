use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use utilmax::Error;

mod commands;

#[derive(Parser)]
#[command(
    name = "utilmax",
    version,
    about = "Utility-maximizing bandwidth-sharing networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Source {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "preset")]
    pub scenario: Option<PathBuf>,
    /// Built-in preset used instead of a scenario file.
    #[arg(long)]
    pub preset: Option<String>,
    /// Directory for output files.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the machine-readable JSON document instead of the text report.
    #[arg(long)]
    pub json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the per-state allocation problem.
    Allocate {
        #[command(flatten)]
        source: Source,
        /// Queue lengths, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        state: Vec<f64>,
    },
    /// Static planning LP, bottlenecks and resource pooling.
    Plan {
        #[command(flatten)]
        source: Source,
    },
    /// Integrate the fluid model.
    Fluid {
        #[command(flatten)]
        source: Source,
        /// Initial state; defaults to `experiment.initial_state`.
        #[arg(long, value_delimiter = ',')]
        initial: Option<Vec<f64>>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
    },
    /// Simulate one or more sample paths.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value = "utility-max")]
        policy: String,
        /// Member of the scaling sequence to simulate; base traffic if omitted.
        #[arg(long)]
        k: Option<u32>,
        /// Seeds, comma separated; defaults to `experiment.seed`.
        #[arg(long, value_delimiter = ',')]
        seed: Option<Vec<u64>>,
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Diffusion-scale study along the scaling sequence.
    DiffusionStudy {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<u32>>,
        #[arg(long, value_delimiter = ',')]
        seed: Option<Vec<u64>>,
        /// Diffusion-time horizon.
        #[arg(long)]
        horizon: Option<f64>,
        /// Diffusion-time grid step.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Print a built-in scenario as JSON.
    Preset {
        /// Preset name; omit to list the presets.
        name: Option<String>,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Range(_) => 2,
        e if e.is_precondition() => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Allocate { source, state } => commands::allocate(&source, &state),
        Command::Plan { source } => commands::plan(&source),
        Command::Fluid {
            source,
            initial,
            horizon,
            step,
        } => commands::fluid(&source, initial, horizon, step),
        Command::Simulate {
            source,
            policy,
            k,
            seed,
            horizon,
        } => commands::simulate(&source, &policy, k, seed, horizon),
        Command::DiffusionStudy {
            source,
            k,
            seed,
            horizon,
            step,
        } => commands::diffusion_study(&source, k, seed, horizon, step),
        Command::Preset { name } => commands::preset(name.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
