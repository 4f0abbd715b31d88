//! `pilotwave`: trajectories, density snapshots, H-function series and
//! relaxation timescales for an ensemble in the two-dimensional box.

mod commands;
mod config;
mod literal;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::literal::{parse_grid, parse_real};

#[derive(Debug, Parser)]
#[command(name = "pilotwave", version, about = "Quantum relaxation in a 2D box")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Mode table (JSON array of {m, n, amplitude, phase}); default is the bundled 16-mode state.
    #[arg(long, global = true)]
    pub state: Option<PathBuf>,
    #[arg(long, global = true, env = "PILOTWAVE_OUTPUT_DIR")]
    pub output_dir: Option<PathBuf>,
    /// Cap on worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Lattice, e.g. `200x200`.
    #[arg(long, global = true, value_parser = parse_grid)]
    pub grid: Option<(usize, usize)>,
    /// Coarse-graining length, e.g. `pi/16`.
    #[arg(long, global = true, value_parser = parse_real)]
    pub epsilon: Option<f64>,
    /// Initial density: `eq15`, `equilibrium`, or a mode-table file χ with ρ₀ = |χ|².
    #[arg(long, global = true)]
    pub rho0: Option<String>,
    /// Use the cheaper step budget for desk-scale runs.
    #[arg(long, global = true)]
    pub desk: bool,
    #[arg(long, global = true)]
    pub max_steps: Option<u64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate and dump one validated trajectory.
    Trajectory {
        #[arg(long, value_parser = parse_real)]
        x: f64,
        #[arg(long, value_parser = parse_real)]
        y: f64,
        #[arg(long, value_parser = parse_real, default_value = "0")]
        t0: f64,
        #[arg(long, value_parser = parse_real, default_value = "4pi")]
        t1: f64,
    },
    /// Separation of random nearby trajectory pairs.
    Diverge {
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        #[arg(long, value_parser = parse_real, default_value = "0.005")]
        separation: f64,
        #[arg(long, value_parser = parse_real, default_value = "4pi")]
        t1: f64,
        #[arg(long, default_value_t = 33)]
        samples: usize,
    },
    /// Reconstruct ρ(·, t) on a lattice.
    Density {
        #[arg(long, value_parser = parse_real, default_value = "0")]
        time: f64,
        /// Also write overlapping-cell averages with this shift fraction.
        #[arg(long)]
        overlap_shift: Option<f64>,
    },
    /// Coarse-grained H-function every `interval` up to `horizon`.
    Hseries {
        #[arg(long, value_parser = parse_real)]
        horizon: Option<f64>,
        #[arg(long, value_parser = parse_real)]
        interval: Option<f64>,
        /// Points per cell side of the error-bar lattice; 0 disables error bars.
        #[arg(long)]
        resample: Option<usize>,
    },
    /// Time-reversed experiment started from ρ(·, t_r) and ψ*(·, t_r).
    Reverse {
        #[arg(long, value_parser = parse_real, default_value = "pi")]
        tr: f64,
        #[arg(long, value_parser = parse_real)]
        interval: Option<f64>,
    },
    /// Rough and curvature-based relaxation timescales.
    Tau {
        #[arg(long, default_value_t = 512)]
        fine_grid: usize,
        /// Skip the curvature quadrature.
        #[arg(long)]
        rough_only: bool,
    },
    /// Quick end-to-end checks of exact cases.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
