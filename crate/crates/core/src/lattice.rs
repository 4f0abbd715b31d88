//! Cell-centred uniform lattices over the box.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::wavefield::{Position, BOX_SIDE};

/// A uniform grid of `nx × ny` points offset half a spacing from the walls.
///
/// Points are stored row-major: index `row * nx + col`, where `col` runs
/// along x and `row` along y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub nx: usize,
    pub ny: usize,
}

impl Lattice {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidConfig(format!(
                "lattice must be at least 2x2, got {nx}x{ny}"
            )));
        }
        Ok(Self { nx, ny })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> (f64, f64) {
        (BOX_SIDE / self.nx as f64, BOX_SIDE / self.ny as f64)
    }

    /// Area weight of one point in a midpoint quadrature.
    pub fn cell_area(&self) -> f64 {
        let (hx, hy) = self.spacing();
        hx * hy
    }

    pub fn position(&self, row: usize, col: usize) -> Position {
        let (hx, hy) = self.spacing();
        Position::new((col as f64 + 0.5) * hx, (row as f64 + 0.5) * hy)
    }

    pub fn position_of(&self, index: usize) -> Position {
        self.position(index / self.nx, index % self.nx)
    }

    pub fn positions(&self) -> impl Iterator<Item = Position> + '_ {
        (0..self.len()).map(|i| self.position_of(i))
    }
}

/// Scalar values on a [`Lattice`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    pub lattice: Lattice,
    pub values: Vec<f64>,
}

impl SampledField {
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::InvalidConfig(format!(
                "{} values for a {}x{} lattice",
                values.len(),
                lattice.nx,
                lattice.ny
            )));
        }
        Ok(Self { lattice, values })
    }

    /// Samples an analytic field at every lattice point.
    pub fn from_fn<F>(lattice: Lattice, exec: Execution, f: F) -> Self
    where
        F: Fn(Position) -> f64 + Sync + Send,
    {
        let values = exec.map_indexed(lattice.len(), |i| f(lattice.position_of(i)));
        Self { lattice, values }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.lattice.nx + col]
    }

    /// Midpoint-rule integral over the box.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.lattice.cell_area()
    }
}
