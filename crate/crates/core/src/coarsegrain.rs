//! Cell averages of lattice fields and the coarse-grained H-function.
//!
//! Non-overlapping cells tile the box exactly; overlapping cells of side ε are
//! shifted by a fraction of ε and give a smoother picture. Cell values are the
//! arithmetic mean of the lattice points inside the cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Lattice, SampledField};
use crate::wavefield::{ModeSuperposition, Position, BOX_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoarseMode {
    NonOverlapping,
    Overlapping,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarseGrainSpec {
    /// Cell side ε.
    pub cell_side: f64,
    pub mode: CoarseMode,
    /// Shift between neighbouring overlapping cells, as a fraction of ε.
    pub overlap_shift_fraction: f64,
    /// Lattice points per cell side.
    pub samples_per_cell_side: usize,
}

impl CoarseGrainSpec {
    pub fn non_overlapping(cells_per_side: usize, samples_per_cell_side: usize) -> Self {
        Self {
            cell_side: BOX_SIDE / cells_per_side as f64,
            mode: CoarseMode::NonOverlapping,
            overlap_shift_fraction: 0.12,
            samples_per_cell_side,
        }
    }

    pub fn overlapping(cells_per_side: usize, shift_fraction: f64, samples_per_cell_side: usize) -> Self {
        Self {
            cell_side: BOX_SIDE / cells_per_side as f64,
            mode: CoarseMode::Overlapping,
            overlap_shift_fraction: shift_fraction,
            samples_per_cell_side,
        }
    }

    /// Same cells, different within-cell sampling.
    pub fn with_samples(self, samples_per_cell_side: usize) -> Self {
        Self {
            samples_per_cell_side,
            ..self
        }
    }

    /// Number of cells of side ε needed to span the box; ε must divide π.
    pub fn cells_per_side(&self) -> Result<usize> {
        if !(self.cell_side > 0.0 && self.cell_side <= BOX_SIDE) {
            return Err(Error::InvalidConfig(format!(
                "cell side {} must lie in (0, pi]",
                self.cell_side
            )));
        }
        let ratio = BOX_SIDE / self.cell_side;
        let cells = ratio.round();
        if (ratio - cells).abs() > 1e-9 * ratio {
            return Err(Error::InvalidConfig(format!(
                "cell side {} does not divide the box side",
                self.cell_side
            )));
        }
        Ok(cells as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.cells_per_side()?;
        if self.samples_per_cell_side == 0 {
            return Err(Error::InvalidConfig("samples_per_cell_side must be > 0".into()));
        }
        if self.mode == CoarseMode::Overlapping
            && !(self.overlap_shift_fraction > 0.0 && self.overlap_shift_fraction <= 1.0)
        {
            return Err(Error::InvalidConfig(format!(
                "overlap shift fraction {} must lie in (0, 1]",
                self.overlap_shift_fraction
            )));
        }
        Ok(())
    }

    /// The lattice whose points tile every cell with `samples_per_cell_side²` points.
    pub fn lattice(&self) -> Result<Lattice> {
        self.validate()?;
        let n = self.cells_per_side()? * self.samples_per_cell_side;
        Lattice::square(n)
    }

    /// Cell-centre coordinates along one axis.
    pub fn centers(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let eps = self.cell_side;
        Ok(match self.mode {
            CoarseMode::NonOverlapping => (0..self.cells_per_side()?)
                .map(|k| (k as f64 + 0.5) * eps)
                .collect(),
            CoarseMode::Overlapping => {
                let shift = self.overlap_shift_fraction * eps;
                let last = ((BOX_SIDE - eps) / shift + 1e-9).floor() as usize;
                (0..=last).map(|k| 0.5 * eps + k as f64 * shift).collect()
            }
        })
    }
}

/// Coarse-grained values assigned to cell centres.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGrid {
    pub centers_x: Vec<f64>,
    pub centers_y: Vec<f64>,
    /// Row-major, rows along y.
    pub values: Vec<f64>,
    pub spec: CoarseGrainSpec,
}

impl CellGrid {
    pub fn dims(&self) -> (usize, usize) {
        (self.centers_x.len(), self.centers_y.len())
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.centers_x.len() + col]
    }

    pub fn center(&self, row: usize, col: usize) -> Position {
        Position::new(self.centers_x[col], self.centers_y[row])
    }

    /// `Σ ε² v` over the cells.
    pub fn mass(&self) -> f64 {
        let e2 = self.spec.cell_side * self.spec.cell_side;
        self.values.iter().sum::<f64>() * e2
    }

    /// Copy rescaled to unit cell-quadrature mass.
    pub fn normalized(&self) -> CellGrid {
        let mass = self.mass();
        let mut out = self.clone();
        if mass > 0.0 {
            out.values.iter_mut().for_each(|v| *v /= mass);
        }
        out
    }
}

/// Averages a lattice field over the cells described by `spec`.
pub fn coarse_grain(field: &SampledField, spec: &CoarseGrainSpec) -> Result<CellGrid> {
    spec.validate()?;
    let lat = field.lattice;
    let cells = spec.cells_per_side()?;
    match spec.mode {
        CoarseMode::NonOverlapping => {
            if lat.nx % cells != 0 || lat.ny % cells != 0 {
                return Err(Error::GridMismatch {
                    lattice: if lat.nx % cells != 0 { lat.nx } else { lat.ny },
                    cells,
                });
            }
            let (bx, by) = (lat.nx / cells, lat.ny / cells);
            let norm = 1.0 / (bx * by) as f64;
            let mut values = vec![0.0; cells * cells];
            for row in 0..lat.ny {
                let cr = row / by;
                for col in 0..lat.nx {
                    values[cr * cells + col / bx] += field.values[row * lat.nx + col];
                }
            }
            values.iter_mut().for_each(|v| *v *= norm);
            let centers = spec.centers()?;
            Ok(CellGrid {
                centers_x: centers.clone(),
                centers_y: centers,
                values,
                spec: *spec,
            })
        }
        CoarseMode::Overlapping => {
            let centers = spec.centers()?;
            let table = SummedArea::new(field);
            let (hx, hy) = lat.spacing();
            let span = |c: f64, h: f64, n: usize| -> (usize, usize) {
                // points (i + 1/2) h inside [c - ε/2, c + ε/2)
                let lo = ((c - 0.5 * spec.cell_side) / h - 0.5 - 1e-9).ceil().max(0.0) as usize;
                let hi = ((c + 0.5 * spec.cell_side) / h - 0.5 - 1e-9).ceil().max(0.0) as usize;
                (lo.min(n), hi.min(n))
            };
            let xs: Vec<_> = centers.iter().map(|&c| span(c, hx, lat.nx)).collect();
            let ys: Vec<_> = centers.iter().map(|&c| span(c, hy, lat.ny)).collect();
            let mut values = Vec::with_capacity(centers.len() * centers.len());
            for &(r0, r1) in &ys {
                for &(c0, c1) in &xs {
                    let count = (r1 - r0) * (c1 - c0);
                    if count == 0 {
                        return Err(Error::GridMismatch {
                            lattice: lat.nx,
                            cells: centers.len(),
                        });
                    }
                    values.push(table.sum(r0, r1, c0, c1) / count as f64);
                }
            }
            Ok(CellGrid {
                centers_x: centers.clone(),
                centers_y: centers,
                values,
                spec: *spec,
            })
        }
    }
}

/// Coarse-grains the analytic `|ψ(·, t)|²` on the spec's own lattice.
pub fn coarse_grain_density(
    state: &ModeSuperposition,
    t: f64,
    spec: &CoarseGrainSpec,
    exec: crate::exec::Execution,
) -> Result<CellGrid> {
    let lattice = spec.lattice()?;
    let eval = state.evaluator(t);
    let field = SampledField::from_fn(lattice, exec, |p| eval.density(p));
    coarse_grain(&field, spec)
}

struct SummedArea {
    nx: usize,
    table: Vec<f64>,
}

impl SummedArea {
    fn new(field: &SampledField) -> Self {
        let (nx, ny) = (field.lattice.nx, field.lattice.ny);
        let w = nx + 1;
        let mut table = vec![0.0; w * (ny + 1)];
        for row in 0..ny {
            let mut acc = 0.0;
            for col in 0..nx {
                acc += field.values[row * nx + col];
                table[(row + 1) * w + col + 1] = table[row * w + col + 1] + acc;
            }
        }
        Self { nx, table }
    }

    /// Sum over rows `r0..r1`, columns `c0..c1`.
    fn sum(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
        let w = self.nx + 1;
        self.table[r1 * w + c1] - self.table[r0 * w + c1] - self.table[r1 * w + c0] + self.table[r0 * w + c0]
    }
}

/// Coarse-grained H-function `Σ ε² ρ̄ ln(ρ̄ / ψ̄²)`.
///
/// Both grids are first rescaled to unit mass so that quadrature bias cannot
/// push the result below zero. Cells with `ρ̄ = 0` contribute nothing.
pub fn hbar(rho_cells: &CellGrid, psi2_cells: &CellGrid) -> Result<f64> {
    for grid in [rho_cells, psi2_cells] {
        if grid.spec.mode != CoarseMode::NonOverlapping {
            return Err(Error::InvalidConfig(
                "the H-function needs non-overlapping cells".into(),
            ));
        }
    }
    if rho_cells.dims() != psi2_cells.dims()
        || (rho_cells.spec.cell_side - psi2_cells.spec.cell_side).abs() > 1e-12
    {
        return Err(Error::InvalidConfig(
            "rho and |psi|^2 grids use different cells".into(),
        ));
    }
    let rho = rho_cells.normalized();
    let psi2 = psi2_cells.normalized();
    let e2 = rho.spec.cell_side * rho.spec.cell_side;
    let nx = rho.centers_x.len();
    let mut total = 0.0;
    for (k, (&r, &q)) in rho.values.iter().zip(&psi2.values).enumerate() {
        if r <= 0.0 {
            continue;
        }
        if q <= 0.0 {
            return Err(Error::Domain {
                i: k / nx,
                j: k % nx,
                rho: r,
            });
        }
        total += e2 * r * (r / q).ln();
    }
    // exact ties can round to a tiny negative
    Ok(total.max(0.0))
}

/// Fine-grained `∫ ρ ln(ρ/|ψ|²)` at `t = 0` by midpoint quadrature.
pub fn h_finegrained<F>(state: &ModeSuperposition, rho0: F, lattice: Lattice) -> f64
where
    F: Fn(Position) -> f64,
{
    let eval = state.evaluator(0.0);
    let mut total = 0.0;
    for p in lattice.positions() {
        let rho = rho0(p);
        let psi2 = eval.density(p);
        if rho > 0.0 && psi2 > 0.0 {
            total += rho * (rho / psi2).ln();
        }
    }
    total * lattice.cell_area()
}
