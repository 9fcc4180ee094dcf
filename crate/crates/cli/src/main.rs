//! `photobio`: batch front end for the suspension stability pipeline.

mod commands;
mod format;
mod svg;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "photobio", version, about = "Basic state and linear stability of phototactic suspensions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Equilibrium concentration and light profiles.
    BasicState(Common),
    /// Lowest neutral Rayleigh number over a wavenumber range.
    NeutralCurve(Common),
    /// Critical wavenumber and Rayleigh number.
    Critical(Common),
    /// Critical points over the cross product of the `[sweep]` axes.
    Sweep(Common),
    /// Perturbation fields over one oscillation cycle at the critical point.
    ModeSnapshots(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    a_min: Option<f64>,
    #[arg(long)]
    a_max: Option<f64>,
    #[arg(long)]
    a_points: Option<usize>,
    /// Worker threads for sweeps; defaults to the available cores.
    #[arg(long, env = "PHOTOBIO_JOBS")]
    jobs: Option<usize>,
}

/// Failure classes, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(photobio::Error),
    #[error("{failed} of {total} sweep points failed")]
    PartialSweep { failed: usize, total: usize },
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> CliError {
        CliError::Config(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::PartialSweep { .. } => 3,
        }
    }
}

impl From<photobio::Error> for CliError {
    fn from(e: photobio::Error) -> CliError {
        use photobio::Error as E;
        match e {
            E::Config(_) | E::InvalidParams(_) | E::Domain(_) | E::Stationary => CliError::Config(e.to_string()),
            other => CliError::Numerical(other),
        }
    }
}

fn main() -> ExitCode {
    // Sequential kernels keep every result independent of thread scheduling;
    // sweeps parallelize over points instead.
    faer::set_global_parallelism(faer::Par::Seq);
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::BasicState(c) => commands::basic_state(c),
        Command::NeutralCurve(c) => commands::neutral_curve(c),
        Command::Critical(c) => commands::critical(c),
        Command::Sweep(c) => sweep::run(c),
        Command::ModeSnapshots(c) => commands::mode_snapshots(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("photobio: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
