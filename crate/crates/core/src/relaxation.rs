//! Time series of the coarse-grained H-function and the relaxation timescales
//! derived from it.

use serde::{Deserialize, Serialize};

use crate::coarsegrain::{coarse_grain, coarse_grain_density, hbar, CoarseGrainSpec, CoarseMode};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::integrator::{integrate_validated, IntegratorConfig, TrajectoryStatus, TABLEAU_ID};
use crate::lattice::{Lattice, SampledField};
use crate::transport::{density_at, nearest_where, DensityLattice, InitialDensity, OriginMap};
use crate::wavefield::{ModeSuperposition, Position, BOX_SIDE};

/// Provenance attached to every series and report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub crate_version: String,
    pub tableau: String,
    pub state_hash: String,
    pub rho0: String,
    pub integrator: IntegratorConfig,
    pub coarse_grain: CoarseGrainSpec,
    pub resample_samples_per_cell_side: Option<usize>,
    /// Both coarse-grained fields are rescaled to unit mass before the H-function.
    pub renormalized_cells: bool,
}

impl RunMetadata {
    pub fn new(
        state: &ModeSuperposition,
        rho0: &InitialDensity,
        config: &IntegratorConfig,
        spec: &CoarseGrainSpec,
        resample: Option<usize>,
    ) -> Self {
        Self {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            tableau: TABLEAU_ID.to_string(),
            state_hash: state.state_hash(),
            rho0: rho0.label().to_string(),
            integrator: *config,
            coarse_grain: *spec,
            resample_samples_per_cell_side: resample,
            renormalized_cells: true,
        }
    }
}

/// Diagnostics for one sample time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub time: f64,
    pub hbar: f64,
    pub hbar_resampled: Option<f64>,
    pub non_validated_fraction: f64,
    pub flagged_fraction: f64,
    pub lattice_points: usize,
    pub steps_taken: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HSeries {
    pub times: Vec<f64>,
    pub hbar_values: Vec<f64>,
    /// `|H̄(resampled) - H̄|`, zero when no resampling was requested.
    pub error_bars: Vec<f64>,
    pub samples: Vec<SampleStats>,
    pub run_metadata: RunMetadata,
}

impl HSeries {
    /// Largest `|ΔH̄| / H̄` over the series.
    pub fn max_relative_error(&self) -> f64 {
        self.error_bars
            .iter()
            .zip(&self.hbar_values)
            .map(|(e, h)| e / h)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HSeriesOptions {
    /// Recompute every sample on a lattice with this many points per cell side.
    pub resample_samples_per_cell_side: Option<usize>,
}

/// `0, interval, 2·interval, …` up to and including `horizon` (to rounding).
pub fn sample_times(horizon: f64, interval: f64) -> Result<Vec<f64>> {
    if !(interval > 0.0) || !(horizon >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "need interval > 0 and horizon >= 0, got {interval} and {horizon}"
        )));
    }
    let count = (horizon / interval + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| k as f64 * interval).collect())
}

/// Everything computed for one time: the reconstructed density and its H̄.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub origins: OriginMap,
    pub density: DensityLattice,
    pub hbar: f64,
}

/// Reconstructs `ρ(·, t)` on the spec's lattice and evaluates H̄.
///
/// `t` may be negative, in which case trajectories run forwards to `t = 0`.
pub fn snapshot(
    state: &ModeSuperposition,
    rho0: &InitialDensity,
    t: f64,
    spec: &CoarseGrainSpec,
    config: &IntegratorConfig,
    exec: Execution,
) -> Result<Snapshot> {
    if spec.mode != CoarseMode::NonOverlapping {
        return Err(Error::InvalidConfig(
            "H-series needs non-overlapping cells".into(),
        ));
    }
    let lattice = spec.lattice()?;
    let origins = trace_to_origin(state, t, lattice, config, exec)?;
    let density = density_at(state, rho0, &origins, exec)?;
    let rho_cells = coarse_grain(&density.rho_field(), spec)?;
    let psi_cells = coarse_grain_density(state, t, spec, exec)?;
    let h = hbar(&rho_cells, &psi_cells)?;
    Ok(Snapshot {
        origins,
        density,
        hbar: h,
    })
}

fn trace_to_origin(
    state: &ModeSuperposition,
    t: f64,
    lattice: Lattice,
    config: &IntegratorConfig,
    exec: Execution,
) -> Result<OriginMap> {
    if t >= 0.0 {
        return crate::transport::backtrack_lattice(state, t, lattice, config, exec);
    }
    // negative times: same bookkeeping, integration runs t -> 0 forwards
    config.validate()?;
    let results = exec.map_indexed(lattice.len(), |i| {
        integrate_validated(state, lattice.position_of(i), t, 0.0, config)
    });
    let mut map = OriginMap {
        target_time: t,
        lattice,
        origins: Vec::with_capacity(lattice.len()),
        statuses: Vec::with_capacity(lattice.len()),
        delta_used: Vec::with_capacity(lattice.len()),
        fallback_flags: vec![false; lattice.len()],
        steps_taken: 0,
    };
    let mut usable = Vec::with_capacity(lattice.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(r) => {
                usable.push(r.status.has_endpoint());
                map.origins.push(r.endpoint);
                map.statuses.push(Some(r.status));
                map.delta_used.push(r.delta_used);
                map.steps_taken += r.steps_taken;
            }
            Err(_) => {
                usable.push(false);
                map.origins.push(lattice.position_of(i));
                map.statuses.push(None);
                map.delta_used.push(f64::NAN);
            }
        }
    }
    for i in 0..lattice.len() {
        if !usable[i] {
            let j = nearest_where(lattice, i, &usable).ok_or(Error::FallbackUnavailable)?;
            map.origins[i] = map.origins[j];
            map.fallback_flags[i] = true;
        }
    }
    Ok(map)
}

/// H̄ at each of `times`, with optional resampling error bars.
pub fn hseries_at(
    state: &ModeSuperposition,
    rho0: &InitialDensity,
    times: &[f64],
    spec: &CoarseGrainSpec,
    config: &IntegratorConfig,
    options: HSeriesOptions,
    exec: Execution,
) -> Result<HSeries> {
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("sample times must increase strictly".into()));
    }
    let mut series = HSeries {
        times: times.to_vec(),
        hbar_values: Vec::with_capacity(times.len()),
        error_bars: Vec::with_capacity(times.len()),
        samples: Vec::with_capacity(times.len()),
        run_metadata: RunMetadata::new(state, rho0, config, spec, options.resample_samples_per_cell_side),
    };
    for &t in times {
        let snap = snapshot(state, rho0, t, spec, config, exec)?;
        let resampled = match options.resample_samples_per_cell_side {
            Some(s) => Some(snapshot(state, rho0, t, &spec.with_samples(s), config, exec)?.hbar),
            None => None,
        };
        series.hbar_values.push(snap.hbar);
        series
            .error_bars
            .push(resampled.map_or(0.0, |r| (r - snap.hbar).abs()));
        series.samples.push(SampleStats {
            time: t,
            hbar: snap.hbar,
            hbar_resampled: resampled,
            non_validated_fraction: snap.origins.non_validated_fraction(),
            flagged_fraction: snap.density.flagged_fraction(),
            lattice_points: snap.origins.lattice.len(),
            steps_taken: snap.origins.steps_taken,
        });
    }
    Ok(series)
}

/// H̄ every `interval` from 0 to `horizon`.
#[allow(clippy::too_many_arguments)]
pub fn hseries(
    state: &ModeSuperposition,
    rho0: &InitialDensity,
    horizon: f64,
    interval: f64,
    spec: &CoarseGrainSpec,
    config: &IntegratorConfig,
    options: HSeriesOptions,
    exec: Execution,
) -> Result<HSeries> {
    let times = sample_times(horizon, interval)?;
    hseries_at(state, rho0, &times, spec, config, options, exec)
}

/// Least-squares line through `(t, ln H̄)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub slope: f64,
    pub intercept: f64,
    /// `-1/slope`; infinite when the series does not decay.
    pub t_c: f64,
    pub r_squared: f64,
}

impl ExponentialFit {
    pub fn is_decaying(&self) -> bool {
        self.slope < 0.0
    }
}

/// Fits `H̄(t) ≈ H̄₀ e^{-t/t_c}` by ordinary least squares on `ln H̄`.
///
/// A non-negative slope is reported with `t_c = ∞` rather than as an error.
pub fn fit_exponential(times: &[f64], values: &[f64]) -> Result<ExponentialFit> {
    if times.len() != values.len() || times.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "need at least two paired samples, got {} times and {} values",
            times.len(),
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::DegenerateFit(format!("non-positive value {v}")));
    }
    let n = times.len() as f64;
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mean_t = times.iter().sum::<f64>() / n;
    let mean_l = logs.iter().sum::<f64>() / n;
    let (mut stt, mut stl, mut sll) = (0.0, 0.0, 0.0);
    for (t, l) in times.iter().zip(&logs) {
        let (dt, dl) = (t - mean_t, l - mean_l);
        stt += dt * dt;
        stl += dt * dl;
        sll += dl * dl;
    }
    if stt == 0.0 {
        return Err(Error::DegenerateFit("all sample times coincide".into()));
    }
    let slope = stl / stt;
    let intercept = mean_l - slope * mean_t;
    let ss_res: f64 = times
        .iter()
        .zip(&logs)
        .map(|(t, l)| (l - intercept - slope * t).powi(2))
        .sum();
    let r_squared = if sll > 0.0 {
        (1.0 - ss_res / sll).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let t_c = if slope < 0.0 { -1.0 / slope } else { f64::INFINITY };
    Ok(ExponentialFit {
        slope,
        intercept,
        t_c,
        r_squared,
    })
}

pub fn fit_series(series: &HSeries) -> Result<ExponentialFit> {
    fit_exponential(&series.times, &series.hbar_values)
}

/// Order-of-magnitude relaxation time `1/(ε ΔE^{3/2})` (ħ = m = 1).
pub fn tau_rough(epsilon: f64, delta_e: f64) -> f64 {
    1.0 / (epsilon * delta_e.powf(1.5))
}

/// Timescale from the initial curvature of H̄.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureTimescale {
    /// Infinite when `I = 0`.
    pub tau: f64,
    pub i_value: f64,
    pub hbar0: f64,
    /// Leading-order `(d²H̄/dt²)₀ = -ε² I / 12`; never positive.
    pub d2h_check: f64,
    /// ρ₀-mass of the near-node points left out of the quadrature.
    pub excluded_mass: f64,
}

/// Ratio of `max |ψ₀|²` below which points are left out of the `I` quadrature.
pub const NODE_EXCLUSION_RATIO: f64 = 1e-6;

/// `τ = (1/ε) sqrt(12 H̄₀ / I)` with `I = ∫ (|ψ₀|²/f₀) |∇(Ẋ₀·∇f₀)|²`.
pub fn tau_curvature(
    state: &ModeSuperposition,
    rho0: &InitialDensity,
    epsilon: f64,
    fine_grid: usize,
    exec: Execution,
) -> Result<CurvatureTimescale> {
    if fine_grid < 2 {
        return Err(Error::InvalidConfig("fine grid too small".into()));
    }
    let cells = CoarseGrainSpec {
        cell_side: epsilon,
        mode: CoarseMode::NonOverlapping,
        overlap_shift_fraction: 0.12,
        samples_per_cell_side: 1,
    };
    let cells_per_side = cells.cells_per_side()?;
    let lattice = Lattice::square(fine_grid)?;
    let eval = state.evaluator(0.0);
    let step = BOX_SIDE / 4096.0;

    // D = Ẋ₀·∇f₀
    let advective = |p: Position| -> Option<f64> {
        let (psi, g) = eval.psi_and_gradient(p);
        let psi2 = psi.norm_sqr();
        if psi2 == 0.0 {
            return None;
        }
        let v = [(psi.conj() * g[0]).im / psi2, (psi.conj() * g[1]).im / psi2];
        let grad_f = grad_f0(
            state,
            rho0,
            p,
            psi2,
            [2.0 * (psi.conj() * g[0]).re, 2.0 * (psi.conj() * g[1]).re],
            step,
        )?;
        Some(v[0] * grad_f[0] + v[1] * grad_f[1])
    };

    let psi2_field = SampledField::from_fn(lattice, exec, |p| eval.density(p));
    let max_psi2 = psi2_field.values.iter().cloned().fold(0.0, f64::max);
    let cutoff = NODE_EXCLUSION_RATIO * max_psi2;

    // (integrand contribution, excluded ρ₀ mass) per point
    let terms = exec.map_indexed(lattice.len(), |i| {
        let p = lattice.position_of(i);
        let psi2 = psi2_field.values[i];
        let rho = rho0.rho(state, p);
        if psi2 < cutoff {
            return (0.0, rho);
        }
        let f0 = rho / psi2;
        if !(f0 > 0.0) {
            return (0.0, 0.0);
        }
        let d = |dx: f64, dy: f64| advective(Position::new(p.x + dx, p.y + dy));
        let five_point = |fm2: Option<f64>, fm1: Option<f64>, fp1: Option<f64>, fp2: Option<f64>| {
            Some((fm2? - 8.0 * fm1? + 8.0 * fp1? - fp2?) / (12.0 * step))
        };
        let gx = five_point(
            d(-2.0 * step, 0.0),
            d(-step, 0.0),
            d(step, 0.0),
            d(2.0 * step, 0.0),
        );
        let gy = five_point(
            d(0.0, -2.0 * step),
            d(0.0, -step),
            d(0.0, step),
            d(0.0, 2.0 * step),
        );
        match (gx, gy) {
            (Some(gx), Some(gy)) => ((psi2 / f0) * (gx * gx + gy * gy), 0.0),
            _ => (0.0, rho),
        }
    });
    let area = lattice.cell_area();
    let i_value: f64 = terms.iter().map(|t| t.0).sum::<f64>() * area;
    let excluded_mass: f64 = terms.iter().map(|t| t.1).sum::<f64>() * area;
    if excluded_mass > 0.01 {
        return Err(Error::SingularField { excluded_mass });
    }

    // H̄₀ on cells of the same ε
    let samples = fine_grid.div_ceil(cells_per_side).max(1);
    let spec = CoarseGrainSpec::non_overlapping(cells_per_side, samples);
    let lat = spec.lattice()?;
    let rho_cells = coarse_grain(&SampledField::from_fn(lat, exec, |p| rho0.rho(state, p)), &spec)?;
    let psi_cells = coarse_grain_density(state, 0.0, &spec, exec)?;
    let hbar0 = hbar(&rho_cells, &psi_cells)?;

    Ok(CurvatureTimescale {
        tau: curvature_tau(hbar0, i_value, epsilon),
        i_value,
        hbar0,
        d2h_check: -epsilon * epsilon * i_value / 12.0,
        excluded_mass,
    })
}

/// `(1/ε) sqrt(12 H̄₀ / I)`, infinite when `I = 0`.
pub fn curvature_tau(hbar0: f64, i_value: f64, epsilon: f64) -> f64 {
    if i_value > 0.0 {
        (12.0 * hbar0 / i_value).sqrt() / epsilon
    } else {
        f64::INFINITY
    }
}

/// `∇f₀` with `f₀ = ρ₀/|ψ₀|²`; analytic for the built-in densities.
fn grad_f0(
    state: &ModeSuperposition,
    rho0: &InitialDensity,
    p: Position,
    psi2: f64,
    grad_psi2: [f64; 2],
    step: f64,
) -> Option<[f64; 2]> {
    let grad_rho = match rho0 {
        InitialDensity::Equilibrium => return Some([0.0, 0.0]),
        InitialDensity::GroundState => {
            let (sx, cx) = p.x.sin_cos();
            let (sy, cy) = p.y.sin_cos();
            let k = (2.0 / std::f64::consts::PI).powi(2);
            [k * 2.0 * sx * cx * sy * sy, k * 2.0 * sy * cy * sx * sx]
        }
        _ => {
            let r = |dx: f64, dy: f64| rho0.rho(state, Position::new(p.x + dx, p.y + dy));
            let d = |a: f64, b: f64, c: f64, e: f64| (a - 8.0 * b + 8.0 * c - e) / (12.0 * step);
            [
                d(
                    r(-2.0 * step, 0.0),
                    r(-step, 0.0),
                    r(step, 0.0),
                    r(2.0 * step, 0.0),
                ),
                d(
                    r(0.0, -2.0 * step),
                    r(0.0, -step),
                    r(0.0, step),
                    r(0.0, 2.0 * step),
                ),
            ]
        }
    };
    let rho = rho0.rho(state, p);
    let inv = 1.0 / psi2;
    Some([
        grad_rho[0] * inv - rho * grad_psi2[0] * inv * inv,
        grad_rho[1] * inv - rho * grad_psi2[1] * inv * inv,
    ])
}

/// Central-difference `dH̄/dt` at `t = 0` from samples at `±dt`.
pub fn first_derivative_check(
    state: &ModeSuperposition,
    rho0: &InitialDensity,
    spec: &CoarseGrainSpec,
    dt: f64,
    config: &IntegratorConfig,
    exec: Execution,
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig("dt must be > 0".into()));
    }
    let plus = snapshot(state, rho0, dt, spec, config, exec)?.hbar;
    let minus = snapshot(state, rho0, -dt, spec, config, exec)?.hbar;
    Ok((plus - minus) / (2.0 * dt))
}

/// Summary written next to an H-series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationReport {
    pub epsilon: f64,
    pub energy_spread: f64,
    pub tau_rough: f64,
    /// `None` when not computed or infinite.
    pub tau_curvature: Option<f64>,
    pub i_value: Option<f64>,
    pub hbar0: Option<f64>,
    pub t_c: Option<f64>,
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
    pub max_relative_error_bar: Option<f64>,
    pub max_non_validated_fraction: Option<f64>,
    pub metadata: Option<RunMetadata>,
}

impl RelaxationReport {
    pub fn new(state: &ModeSuperposition, epsilon: f64) -> Self {
        let energy_spread = state.energy_spread();
        Self {
            epsilon,
            energy_spread,
            tau_rough: tau_rough(epsilon, energy_spread),
            tau_curvature: None,
            i_value: None,
            hbar0: None,
            t_c: None,
            slope: None,
            r_squared: None,
            max_relative_error_bar: None,
            max_non_validated_fraction: None,
            metadata: None,
        }
    }

    pub fn with_series(mut self, series: &HSeries) -> Result<Self> {
        let fit = fit_series(series)?;
        self.t_c = fit.t_c.is_finite().then_some(fit.t_c);
        self.slope = Some(fit.slope);
        self.r_squared = Some(fit.r_squared);
        self.hbar0 = series.hbar_values.first().copied();
        self.max_relative_error_bar = Some(series.max_relative_error());
        self.max_non_validated_fraction = Some(
            series
                .samples
                .iter()
                .map(|s| s.non_validated_fraction)
                .fold(0.0, f64::max),
        );
        self.metadata = Some(series.run_metadata.clone());
        Ok(self)
    }

    pub fn with_curvature(mut self, c: &CurvatureTimescale) -> Self {
        self.tau_curvature = c.tau.is_finite().then_some(c.tau);
        self.i_value = Some(c.i_value);
        if self.hbar0.is_none() {
            self.hbar0 = Some(c.hbar0);
        }
        self
    }
}

/// Share of trajectories that end with each status.
pub fn status_histogram(map: &OriginMap) -> Vec<(&'static str, usize)> {
    let mut counts: Vec<(&'static str, usize)> = Vec::new();
    for s in &map.statuses {
        let label = s.map_or("node_error", |s: TrajectoryStatus| s.label());
        match counts.iter_mut().find(|(l, _)| *l == label) {
            Some(entry) => entry.1 += 1,
            None => counts.push((label, 1)),
        }
    }
    counts.sort();
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn exact_exponential_is_recovered() {
        let times: Vec<f64> = (0..9).map(|k| k as f64 * PI / 4.0).collect();
        let values: Vec<f64> = times.iter().map(|t| 2.0 * (-t / 3.0).exp()).collect();
        let fit = fit_exponential(&times, &values).unwrap();
        assert!((fit.t_c - 3.0).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.intercept - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn constant_series_does_not_decay() {
        let fit = fit_exponential(&[0.0, 1.0, 2.0], &[0.5, 0.5, 0.5]).unwrap();
        assert!(fit.t_c.is_infinite());
        assert!(!fit.is_decaying());
        assert!(fit_exponential(&[0.0, 1.0], &[1.0, 0.0]).is_err());
        assert!(fit_exponential(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn rough_timescale_values() {
        assert!((tau_rough(PI / 32.0, 4.0) - 4.0 / PI).abs() < 1e-12);
        let eps = 0.3;
        assert!((tau_rough(eps, 4.0) - 1.0 / (8.0 * eps)).abs() < 1e-15);
        assert!((tau_rough(2.0 * eps, 4.0) - 0.5 * tau_rough(eps, 4.0)).abs() < 1e-15);
    }

    #[test]
    fn sample_times_include_horizon() {
        let t = sample_times(2.0 * PI, PI / 4.0).unwrap();
        assert_eq!(t.len(), 9);
        assert!((t[8] - 2.0 * PI).abs() < 1e-12);
        assert!(sample_times(1.0, 0.0).is_err());
    }

    #[test]
    fn equilibrium_has_no_curvature() {
        let state = ModeSuperposition::default_box16();
        let c = tau_curvature(
            &state,
            &InitialDensity::Equilibrium,
            PI / 32.0,
            64,
            Execution::default(),
        )
        .unwrap();
        assert_eq!(c.i_value, 0.0);
        assert!(c.tau.is_infinite());
        assert!(c.hbar0.abs() < 1e-15);
    }

    #[test]
    fn curvature_tau_scales_inversely_with_epsilon() {
        let state = ModeSuperposition::default_box16();
        let rho0 = InitialDensity::GroundState;
        let a = tau_curvature(&state, &rho0, PI / 16.0, 64, Execution::default()).unwrap();
        // same fields, same H̄₀: only the 1/ε prefactor changes
        let scaled = curvature_tau(a.hbar0, a.i_value, PI / 32.0);
        assert!((scaled - 2.0 * a.tau).abs() < 1e-12 * a.tau);
        assert_eq!(curvature_tau(0.5, 2.0, 0.1), 2.0 * curvature_tau(0.5, 2.0, 0.2));
        assert!(curvature_tau(0.5, 0.0, 0.1).is_infinite());
        assert!(a.d2h_check <= 0.0);
    }
}
