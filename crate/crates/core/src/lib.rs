//! Pilot-wave dynamics of a particle in a two-dimensional box and the
//! relaxation of nonequilibrium ensembles towards `|ψ|²`.
//!
//! * [`wavefield`]: analytic ψ, gradients, guidance velocity.
//! * [`integrator`]: adaptive Runge-Kutta-Fehlberg trajectories with a
//!   tolerance ladder.
//! * [`transport`]: density reconstruction by backtracking.
//! * [`coarsegrain`]: cell averages and the coarse-grained H-function.
//! * [`relaxation`]: H-function time series, decay fits and timescales.

pub mod coarsegrain;
pub mod error;
pub mod exec;
pub mod integrator;
pub mod io;
pub mod lattice;
pub mod relaxation;
pub mod transport;
pub mod wavefield;

pub use error::{Error, Result};
pub use exec::Execution;
