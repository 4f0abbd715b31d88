use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("velocity undefined near a node at ({x}, {y}): |psi|^2 = {density:e}")]
    NodeSingularity { x: f64, y: f64, density: f64 },

    #[error("lattice of {lattice} points per side does not tile {cells} cells per side")]
    GridMismatch { lattice: usize, cells: usize },

    #[error("coarse-grained |psi|^2 vanishes in cell ({i}, {j}) where rho is {rho:e}")]
    Domain { i: usize, j: usize, rho: f64 },

    #[error("excluded near-node mass {excluded_mass:.4} exceeds the 1% budget")]
    SingularField { excluded_mass: f64 },

    #[error("no lattice point integrated successfully; nothing to fall back on")]
    FallbackUnavailable,

    #[error("cannot fit a decay constant: {0}")]
    DegenerateFit(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors that come from the numerics rather than from user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NodeSingularity { .. }
                | Error::Domain { .. }
                | Error::SingularField { .. }
                | Error::FallbackUnavailable
                | Error::DegenerateFit(_)
        )
    }
}
