//! Density transport by backtracking.
//!
//! The ratio `f = ρ/|ψ|²` is constant along trajectories, so the density at
//! `(q, t)` is `|ψ(q, t)|² f(q₀, 0)` where `q₀` is the start of the trajectory
//! through `q`. Integrating backwards from a uniform lattice at time `t` keeps
//! the reconstructed density on that lattice.

use std::f64::consts::{FRAC_2_PI, TAU};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::integrator::{integrate_validated, IntegratorConfig, TrajectoryStatus};
use crate::lattice::{Lattice, SampledField};
use crate::wavefield::{Mode, ModeSuperposition, Position};

/// The ensemble density at `t = 0`.
#[derive(Clone)]
pub enum InitialDensity {
    /// `ρ₀ = |ψ₀|²`, so `f ≡ 1`.
    Equilibrium,
    /// `ρ₀ = (2/π)² sin²x sin²y`, the ground-state density.
    GroundState,
    Custom(Arc<dyn Fn(Position) -> f64 + Send + Sync>),
    /// `ρ(·, time)` of an earlier run, evaluated exactly by backtracking.
    Transported(Arc<TransportedDensity>),
}

impl fmt::Debug for InitialDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialDensity::Equilibrium => f.write_str("Equilibrium"),
            InitialDensity::GroundState => f.write_str("GroundState"),
            InitialDensity::Custom(_) => f.write_str("Custom(..)"),
            InitialDensity::Transported(t) => f
                .debug_struct("Transported")
                .field("time", &t.time)
                .field("base", &t.base)
                .finish(),
        }
    }
}

/// Density of a finished run at `time`, used as a new initial condition.
#[derive(Debug, Clone)]
pub struct TransportedDensity {
    pub state: ModeSuperposition,
    pub base: InitialDensity,
    pub time: f64,
    pub config: IntegratorConfig,
}

/// Why `f` could not be evaluated at a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioFailure {
    /// `|ψ₀|²` below the node floor.
    NearNode,
    /// The inner backtracking of a transported density failed.
    Trajectory,
}

pub fn ground_state_density(p: Position) -> f64 {
    let s = FRAC_2_PI * p.x.sin() * p.y.sin();
    s * s
}

impl InitialDensity {
    /// `ρ₀(pos)` for the ensemble guided by `state`.
    pub fn rho(&self, state: &ModeSuperposition, pos: Position) -> f64 {
        match self {
            InitialDensity::Equilibrium => state.density_at(pos, 0.0),
            InitialDensity::GroundState => ground_state_density(pos),
            InitialDensity::Custom(f) => f(pos),
            InitialDensity::Transported(tr) => match self.f_ratio(state, pos) {
                Ok(f) => f * tr.state.density_at(pos, tr.time),
                Err(_) => 0.0,
            },
        }
    }

    /// `f₀(pos) = ρ₀/|ψ₀|²`.
    pub fn f_ratio(
        &self,
        state: &ModeSuperposition,
        pos: Position,
    ) -> std::result::Result<f64, RatioFailure> {
        match self {
            InitialDensity::Equilibrium => Ok(1.0),
            InitialDensity::GroundState | InitialDensity::Custom(_) => {
                let psi2 = state.density_at(pos, 0.0);
                if psi2 < crate::wavefield::DEFAULT_NODE_FLOOR || psi2 == 0.0 {
                    return Err(RatioFailure::NearNode);
                }
                Ok(self.rho(state, pos) / psi2)
            }
            InitialDensity::Transported(tr) => {
                let back = integrate_validated(&tr.state, pos, tr.time, 0.0, &tr.config)
                    .map_err(|_| RatioFailure::Trajectory)?;
                if !back.status.has_endpoint() {
                    return Err(RatioFailure::Trajectory);
                }
                tr.base.f_ratio(&tr.state, back.endpoint)
            }
        }
    }

    /// Midpoint-rule integral of `ρ₀` over the box.
    pub fn normalization(&self, state: &ModeSuperposition, lattice: Lattice, exec: Execution) -> f64 {
        SampledField::from_fn(lattice, exec, |p| self.rho(state, p)).integral()
    }

    pub fn label(&self) -> &'static str {
        match self {
            InitialDensity::Equilibrium => "equilibrium",
            InitialDensity::GroundState => "ground-state",
            InitialDensity::Custom(_) => "custom",
            InitialDensity::Transported(_) => "transported",
        }
    }
}

/// Where every lattice point at `target_time` came from at `t = 0`.
#[derive(Debug, Clone)]
pub struct OriginMap {
    pub target_time: f64,
    pub lattice: Lattice,
    pub origins: Vec<Position>,
    /// `None` when the integrator hit a node singularity.
    pub statuses: Vec<Option<TrajectoryStatus>>,
    pub delta_used: Vec<f64>,
    /// Origin copied from a neighbouring lattice point.
    pub fallback_flags: Vec<bool>,
    pub steps_taken: u64,
}

impl OriginMap {
    pub fn non_validated_fraction(&self) -> f64 {
        let bad = self
            .statuses
            .iter()
            .filter(|s| **s != Some(TrajectoryStatus::Validated))
            .count();
        bad as f64 / self.statuses.len() as f64
    }

    pub fn fallback_fraction(&self) -> f64 {
        self.fallback_flags.iter().filter(|&&f| f).count() as f64 / self.fallback_flags.len() as f64
    }
}

/// Integrates every lattice point at time `t` back to `t = 0`.
///
/// Points without a usable endpoint take the origin of the nearest validated
/// lattice neighbour and are flagged.
pub fn backtrack_lattice(
    state: &ModeSuperposition,
    t: f64,
    lattice: Lattice,
    config: &IntegratorConfig,
    exec: Execution,
) -> Result<OriginMap> {
    if !(t >= 0.0) {
        return Err(Error::InvalidConfig(format!("target time {t} must be >= 0")));
    }
    config.validate()?;
    let results = exec.map_indexed(lattice.len(), |i| {
        integrate_validated(state, lattice.position_of(i), t, 0.0, config)
    });
    let mut origins = Vec::with_capacity(results.len());
    let mut statuses = Vec::with_capacity(results.len());
    let mut delta_used = Vec::with_capacity(results.len());
    let mut usable = Vec::with_capacity(results.len());
    let mut steps_taken = 0;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => {
                usable.push(r.status.has_endpoint());
                origins.push(r.endpoint);
                statuses.push(Some(r.status));
                delta_used.push(r.delta_used);
                steps_taken += r.steps_taken;
            }
            Err(_) => {
                usable.push(false);
                origins.push(lattice.position_of(i));
                statuses.push(None);
                delta_used.push(f64::NAN);
            }
        }
    }
    let validated: Vec<bool> = statuses
        .iter()
        .map(|s| *s == Some(TrajectoryStatus::Validated))
        .collect();
    let mut fallback_flags = vec![false; lattice.len()];
    for i in 0..lattice.len() {
        if usable[i] {
            continue;
        }
        let source = nearest_where(lattice, i, &validated)
            .or_else(|| nearest_where(lattice, i, &usable))
            .ok_or(Error::FallbackUnavailable)?;
        origins[i] = origins[source];
        fallback_flags[i] = true;
    }
    Ok(OriginMap {
        target_time: t,
        lattice,
        origins,
        statuses,
        delta_used,
        fallback_flags,
        steps_taken,
    })
}

/// Nearest index with `ok[j]`, searching square rings of growing radius.
/// Within a ring candidates are visited in `(Δrow, Δcol)` lexicographic order.
pub fn nearest_where(lattice: Lattice, index: usize, ok: &[bool]) -> Option<usize> {
    let (row, col) = ((index / lattice.nx) as isize, (index % lattice.nx) as isize);
    let (nx, ny) = (lattice.nx as isize, lattice.ny as isize);
    let max_r = nx.max(ny);
    for r in 1..=max_r {
        for dr in -r..=r {
            for dc in -r..=r {
                if dr.abs().max(dc.abs()) != r {
                    continue;
                }
                let (rr, cc) = (row + dr, col + dc);
                if rr < 0 || cc < 0 || rr >= ny || cc >= nx {
                    continue;
                }
                let j = (rr * nx + cc) as usize;
                if ok[j] {
                    return Some(j);
                }
            }
        }
    }
    None
}

/// `f`, `ρ` and flags on a lattice at one time.
#[derive(Debug, Clone)]
pub struct DensityLattice {
    pub time: f64,
    pub lattice: Lattice,
    pub f_values: Vec<f64>,
    pub rho_values: Vec<f64>,
    /// Origin or `f` value taken from a neighbour.
    pub flagged: Vec<bool>,
}

impl DensityLattice {
    pub fn rho_field(&self) -> SampledField {
        SampledField {
            lattice: self.lattice,
            values: self.rho_values.clone(),
        }
    }

    pub fn flagged_fraction(&self) -> f64 {
        self.flagged.iter().filter(|&&f| f).count() as f64 / self.flagged.len() as f64
    }

    /// Fine-grained `∫ ρ ln f`, the exact H-function of the lattice data.
    pub fn h_finegrained(&self) -> f64 {
        let area = self.lattice.cell_area();
        self.f_values
            .iter()
            .zip(&self.rho_values)
            .filter(|(f, r)| **f > 0.0 && **r > 0.0)
            .map(|(f, r)| r * f.ln())
            .sum::<f64>()
            * area
    }
}

/// Reconstructs `ρ(·, t)` on the lattice of `origin_map`.
pub fn density_at(
    state: &ModeSuperposition,
    rho0: &InitialDensity,
    origin_map: &OriginMap,
    exec: Execution,
) -> Result<DensityLattice> {
    let lattice = origin_map.lattice;
    let ratios = exec.map_indexed(lattice.len(), |i| rho0.f_ratio(state, origin_map.origins[i]));
    let ok: Vec<bool> = ratios.iter().map(|r| r.is_ok()).collect();
    let mut f_values = Vec::with_capacity(lattice.len());
    let mut flagged = origin_map.fallback_flags.clone();
    for (i, r) in ratios.iter().enumerate() {
        match r {
            Ok(f) => f_values.push(*f),
            Err(_) => {
                let source = nearest_where(lattice, i, &ok).ok_or(Error::FallbackUnavailable)?;
                f_values.push(*ratios[source].as_ref().expect("source is ok"));
                flagged[i] = true;
            }
        }
    }
    let eval = state.evaluator(origin_map.target_time);
    let rho_values = f_values
        .iter()
        .enumerate()
        .map(|(i, f)| f * eval.density(lattice.position_of(i)))
        .collect();
    Ok(DensityLattice {
        time: origin_map.target_time,
        lattice,
        f_values,
        rho_values,
        flagged,
    })
}

/// Backtracks and reconstructs in one call.
pub fn evolve_density(
    state: &ModeSuperposition,
    rho0: &InitialDensity,
    t: f64,
    lattice: Lattice,
    config: &IntegratorConfig,
    exec: Execution,
) -> Result<(OriginMap, DensityLattice)> {
    let map = backtrack_lattice(state, t, lattice, config, exec)?;
    let density = density_at(state, rho0, &map, exec)?;
    Ok((map, density))
}

/// Conjugated state with `ψ'(·, 0) = ψ*(·, t_r)`: phases `-(θ - E t_r)`.
pub fn reversed_state(state: &ModeSuperposition, t_r: f64) -> ModeSuperposition {
    let modes = state
        .modes()
        .iter()
        .map(|m| Mode {
            phase: (-(m.phase - m.energy() * t_r)).rem_euclid(TAU),
            ..*m
        })
        .collect();
    ModeSuperposition::new(modes).expect("conjugation keeps the table valid")
}

/// A time-reversed experiment built from a forward run at `t_r`.
#[derive(Debug, Clone)]
pub struct ReversedExperiment {
    pub state: ModeSuperposition,
    /// `ρ'(·, 0) = ρ(·, t_r)`, evaluated exactly off-lattice by backtracking.
    pub rho0: InitialDensity,
    /// The forward lattice data reinterpreted at `t' = 0`.
    pub initial: DensityLattice,
}

/// Takes `ψ*(·, t_r)` and `ρ(·, t_r)` as new initial conditions.
///
/// Under the new dynamics `ψ'(·, t) = ψ*(·, t_r - t)` and `ρ'(·, t) = ρ(·, t_r - t)`.
pub fn reverse_setup(
    state: &ModeSuperposition,
    rho0: &InitialDensity,
    rho_at_tr: &DensityLattice,
    t_r: f64,
    config: &IntegratorConfig,
) -> ReversedExperiment {
    let initial = DensityLattice {
        time: 0.0,
        ..rho_at_tr.clone()
    };
    ReversedExperiment {
        state: reversed_state(state, t_r),
        rho0: InitialDensity::Transported(Arc::new(TransportedDensity {
            state: state.clone(),
            base: rho0.clone(),
            time: t_r,
            config: *config,
        })),
        initial,
    }
}

/// Forward-evolved (distorted) lattice: positions at `t` with the density
/// they carry. Used only to cross-check backtracking.
pub fn forward_lattice(
    state: &ModeSuperposition,
    rho0: &InitialDensity,
    t: f64,
    lattice: Lattice,
    config: &IntegratorConfig,
    exec: Execution,
) -> Vec<Option<(Position, f64)>> {
    exec.map_indexed(lattice.len(), |i| {
        let start = lattice.position_of(i);
        let f = rho0.f_ratio(state, start).ok()?;
        let r = integrate_validated(state, start, 0.0, t, config).ok()?;
        if !r.status.has_endpoint() {
            return None;
        }
        Some((r.endpoint, f * state.density_at(r.endpoint, t)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_time_origins_are_the_lattice() {
        let state = ModeSuperposition::default_box16();
        let lat = Lattice::square(10).unwrap();
        let map = backtrack_lattice(
            &state,
            0.0,
            lat,
            &IntegratorConfig::default(),
            Execution::default(),
        )
        .unwrap();
        for (i, o) in map.origins.iter().enumerate() {
            assert_eq!(*o, lat.position_of(i));
        }
        assert_eq!(map.non_validated_fraction(), 0.0);
    }

    #[test]
    fn eigenstate_flow_is_stationary() {
        let state = ModeSuperposition::eigenstate(1, 2, 0.7).unwrap();
        let lat = Lattice::square(6).unwrap();
        let map = backtrack_lattice(
            &state,
            2.5,
            lat,
            &IntegratorConfig::default(),
            Execution::default(),
        )
        .unwrap();
        for (i, o) in map.origins.iter().enumerate() {
            assert!(o.distance(lat.position_of(i)) < 1e-12);
        }
    }

    #[test]
    fn ground_state_density_at_time_zero() {
        let state = ModeSuperposition::default_box16();
        let lat = Lattice::square(12).unwrap();
        let (_, d) = evolve_density(
            &state,
            &InitialDensity::GroundState,
            0.0,
            lat,
            &IntegratorConfig::default(),
            Execution::default(),
        )
        .unwrap();
        for (i, r) in d.rho_values.iter().enumerate() {
            let expected = ground_state_density(lat.position_of(i));
            assert!((r - expected).abs() < 1e-12 * expected.max(1e-3));
        }
    }

    #[test]
    fn equilibrium_is_preserved() {
        let state = ModeSuperposition::default_box16();
        let lat = Lattice::square(8).unwrap();
        let (_, d) = evolve_density(
            &state,
            &InitialDensity::Equilibrium,
            0.8,
            lat,
            &IntegratorConfig::default(),
            Execution::default(),
        )
        .unwrap();
        for (i, r) in d.rho_values.iter().enumerate() {
            assert_eq!(d.f_values[i], 1.0);
            assert!((r - state.density_at(lat.position_of(i), 0.8)).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_search_prefers_lexicographic_offsets() {
        let lat = Lattice::square(5).unwrap();
        let mut ok = vec![false; 25];
        // centre is 12; (−1, 0) is 7 and (0, −1) is 11
        ok[7] = true;
        ok[11] = true;
        assert_eq!(nearest_where(lat, 12, &ok), Some(7));
        ok[6] = true; // (−1, −1) comes first
        assert_eq!(nearest_where(lat, 12, &ok), Some(6));
        assert_eq!(nearest_where(lat, 12, &[false; 25]), None);
    }

    #[test]
    fn failed_points_fall_back_to_neighbours() {
        let state = ModeSuperposition::default_box16();
        let lat = Lattice::square(4).unwrap();
        let config = IntegratorConfig {
            max_steps: 1,
            ..IntegratorConfig::default()
        };
        let err = backtrack_lattice(&state, 1.0, lat, &config, Execution::default()).unwrap_err();
        assert!(matches!(err, Error::FallbackUnavailable));
    }

    #[test]
    fn reversal_is_an_involution() {
        let state = ModeSuperposition::default_box16();
        let twice = reversed_state(&reversed_state(&state, PI), PI);
        for (a, b) in state.modes().iter().zip(twice.modes()) {
            let d = (a.phase - b.phase).rem_euclid(TAU);
            assert!(d.min(TAU - d) < 1e-12);
        }
    }

    #[test]
    fn reversed_state_is_the_conjugate() {
        let state = ModeSuperposition::default_box16();
        let rev = reversed_state(&state, PI);
        let p = Position::new(1.1, 2.3);
        for t in [0.0, 0.5, 2.0] {
            let lhs = rev.psi_at(p, t);
            let rhs = state.psi_at(p, PI - t).conj();
            assert!((lhs - rhs).norm() < 1e-12);
        }
    }

    #[test]
    fn normalization_of_builtin_densities() {
        let state = ModeSuperposition::default_box16();
        let lat = Lattice::square(200).unwrap();
        for rho0 in [InitialDensity::Equilibrium, InitialDensity::GroundState] {
            let n = rho0.normalization(&state, lat, Execution::default());
            assert!((n - 1.0).abs() < 1e-4, "{rho0:?}: {n}");
        }
    }
}
