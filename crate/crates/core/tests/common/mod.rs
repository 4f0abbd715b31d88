//! Helpers shared by the property tests and the acceptance run.
#![allow(dead_code)]

use std::f64::consts::PI;

use pilotwave::coarsegrain::{coarse_grain, CellGrid, CoarseGrainSpec};
use pilotwave::integrator::{integrate_validated, IntegratorConfig};
use pilotwave::lattice::{Lattice, SampledField};
use pilotwave::wavefield::{ModeSuperposition, Position};
use pilotwave::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn cell_grid(values: Vec<f64>, cells: usize) -> CellGrid {
    let field = SampledField::new(Lattice::square(cells).unwrap(), values).unwrap();
    coarse_grain(&field, &CoarseGrainSpec::non_overlapping(cells, 1)).unwrap()
}

/// Points distributed as `|ψ₀|²`, by rejection.
pub fn equilibrium_samples(state: &ModeSuperposition, count: usize, seed: u64) -> Vec<Position> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = state.evaluator(0.0);
    let peak = Lattice::square(256)
        .unwrap()
        .positions()
        .map(|p| eval.density(p))
        .fold(0.0, f64::max)
        * 1.2;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p = Position::new(rng.gen_range(0.0..PI), rng.gen_range(0.0..PI));
        if rng.gen_range(0.0..peak) < eval.density(p) {
            out.push(p);
        }
    }
    out
}

/// Uniform points at least `margin` from the walls.
pub fn random_points(count: usize, seed: u64, margin: f64) -> Vec<Position> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            Position::new(
                rng.gen_range(margin..PI - margin),
                rng.gen_range(margin..PI - margin),
            )
        })
        .collect()
}

/// Start pairs `(a, b)` with `|a - b| = separation`.
pub fn random_pairs(count: usize, seed: u64, separation: f64) -> Vec<(Position, Position)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = 0.05 + separation;
    (0..count)
        .map(|_| {
            let a = Position::new(
                rng.gen_range(margin..PI - margin),
                rng.gen_range(margin..PI - margin),
            );
            let phi = rng.gen_range(0.0..2.0 * PI);
            (
                a,
                Position::new(a.x + separation * phi.cos(), a.y + separation * phi.sin()),
            )
        })
        .collect()
}

/// Distance back to the start after integrating `0 → t1 → 0`; `None` on a node hit.
pub fn roundtrip_errors(
    state: &ModeSuperposition,
    starts: &[Position],
    t1: f64,
    config: &IntegratorConfig,
) -> Vec<Option<f64>> {
    Execution::default().map_indexed(starts.len(), |i| {
        let p = starts[i];
        let there = integrate_validated(state, p, 0.0, t1, config).ok()?;
        let back = integrate_validated(state, there.endpoint, t1, 0.0, config).ok()?;
        Some(back.endpoint.distance(p))
    })
}

/// Largest relative mismatch between the guidance velocity and the
/// finite-difference gradient of the phase, over `count` points off the nodes.
pub fn velocity_phase_mismatch(state: &ModeSuperposition, count: usize, seed: u64) -> f64 {
    let h = 1e-6;
    let wrap = |d: f64| (d + PI).rem_euclid(2.0 * PI) - PI;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (k, p) in random_points(8 * count, seed, 0.05).into_iter().enumerate() {
        if checked == count {
            break;
        }
        let t = 0.37 * k as f64;
        if state.density_at(p, t) < 1e-3 {
            continue;
        }
        let phase = |dx: f64, dy: f64| state.psi_at(Position::new(p.x + dx, p.y + dy), t).arg();
        let fd = [
            wrap(phase(h, 0.0) - phase(-h, 0.0)) / (2.0 * h),
            wrap(phase(0.0, h) - phase(0.0, -h)) / (2.0 * h),
        ];
        let v = state.velocity(p, t, 1e-12).unwrap();
        let scale = v[0].hypot(v[1]).max(1.0);
        for c in 0..2 {
            worst = worst.max((fd[c] - v[c]).abs() / scale);
        }
        checked += 1;
    }
    assert_eq!(checked, count, "not enough points off the nodes");
    worst
}

/// Largest `|∂ρ/∂t + ∇·(ρv)|` for `ρ = |ψ|²`, all derivatives by central differences.
pub fn continuity_residual(state: &ModeSuperposition, count: usize, seed: u64) -> f64 {
    let h = 1e-4;
    let mut worst = 0.0f64;
    for (k, p) in random_points(count, seed, 0.05).into_iter().enumerate() {
        let t = 0.53 * k as f64;
        let current = |q: Position| -> [f64; 2] {
            let s = state.field_sample(q, t, 0.0).unwrap();
            [s.density * s.velocity[0], s.density * s.velocity[1]]
        };
        let dt = (state.density_at(p, t + h) - state.density_at(p, t - h)) / (2.0 * h);
        let dx =
            (current(Position::new(p.x + h, p.y))[0] - current(Position::new(p.x - h, p.y))[0]) / (2.0 * h);
        let dy =
            (current(Position::new(p.x, p.y + h))[1] - current(Position::new(p.x, p.y - h))[1]) / (2.0 * h);
        worst = worst.max((dt + dx + dy).abs());
    }
    worst
}

/// Checks every cell mean against the values of the points it covers.
pub fn cell_means_within_bounds(field: &SampledField, grid: &CellGrid) -> bool {
    let lattice = field.lattice;
    let half = 0.5 * grid.spec.cell_side;
    let (nx, ny) = grid.dims();
    for row in 0..ny {
        for col in 0..nx {
            let c = grid.center(row, col);
            // half-open cells [c - ε/2, c + ε/2)
            let within = |x: f64, c: f64| x >= c - half - 1e-9 && x < c + half - 1e-9;
            let (mut min, mut max) = (f64::MAX, f64::MIN);
            for i in 0..lattice.len() {
                let p = lattice.position_of(i);
                if within(p.x, c.x) && within(p.y, c.y) {
                    min = min.min(field.values[i]);
                    max = max.max(field.values[i]);
                }
            }
            let v = grid.get(row, col);
            if min <= max && !(v >= min - 1e-12 && v <= max + 1e-12) {
                return false;
            }
        }
    }
    true
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
