//! Exact cases that must hold on any build, run end to end in seconds.

use std::f64::consts::PI;

use pilotwave::coarsegrain::{coarse_grain_density, hbar, CoarseGrainSpec};
use pilotwave::integrator::{integrate_validated, IntegratorConfig, TrajectoryStatus};
use pilotwave::lattice::Lattice;
use pilotwave::relaxation::{fit_exponential, hseries, tau_rough, HSeriesOptions};
use pilotwave::transport::{evolve_density, ground_state_density, reversed_state, InitialDensity};
use pilotwave::wavefield::{ModeSuperposition, Position};
use pilotwave::Execution;

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

pub fn run_all(exec: Execution) -> Vec<Check> {
    let state = ModeSuperposition::default_box16();
    let config = IntegratorConfig::desk();
    let mut out = Vec::new();

    let spread = state.energy_spread();
    out.push(check(
        "energy spread",
        (spread - 16.125f64.sqrt()).abs() < 1e-12,
        format!("{spread:.6}"),
    ));

    let probe = Lattice::square(64).expect("valid lattice");
    let drift = probe
        .positions()
        .map(|p| (state.psi_at(p, 4.0 * PI) - state.psi_at(p, 0.0)).norm())
        .fold(0.0, f64::max);
    out.push(check(
        "period 4pi",
        drift < 1e-10,
        format!("max drift {drift:.2e}"),
    ));

    let tau = tau_rough(PI / 32.0, 4.0);
    out.push(check(
        "rough timescale",
        (tau - 4.0 / PI).abs() < 1e-12,
        format!("{tau:.6}"),
    ));

    let times: Vec<f64> = (0..9).map(|k| k as f64 * PI / 4.0).collect();
    let values: Vec<f64> = times.iter().map(|t| 2.0 * (-t / 3.0).exp()).collect();
    match fit_exponential(&times, &values) {
        Ok(fit) => out.push(check(
            "exponential fit",
            (fit.t_c - 3.0).abs() < 1e-10 && (fit.r_squared - 1.0).abs() < 1e-12,
            format!("t_c {:.12}", fit.t_c),
        )),
        Err(e) => out.push(check("exponential fit", false, e.to_string())),
    }

    let eigen = ModeSuperposition::eigenstate(2, 3, 1.0).expect("valid eigenstate");
    let start = Position::new(1.0, 2.0);
    match integrate_validated(&eigen, start, 0.0, 2.0 * PI, &config) {
        Ok(r) => out.push(check(
            "eigenstate at rest",
            r.status == TrajectoryStatus::Validated && r.endpoint.distance(start) < 1e-12,
            format!("moved {:.1e}", r.endpoint.distance(start)),
        )),
        Err(e) => out.push(check("eigenstate at rest", false, e.to_string())),
    }

    let lattice = Lattice::square(40).expect("valid lattice");
    match evolve_density(&state, &InitialDensity::GroundState, 0.0, lattice, &config, exec) {
        Ok((_, d)) => {
            let err = (0..lattice.len())
                .map(|i| (d.rho_values[i] - ground_state_density(lattice.position_of(i))).abs())
                .fold(0.0, f64::max);
            out.push(check(
                "density at t = 0",
                err < 1e-12,
                format!("max error {err:.1e}"),
            ));
        }
        Err(e) => out.push(check("density at t = 0", false, e.to_string())),
    }

    let spec = CoarseGrainSpec::non_overlapping(8, 4);
    match coarse_grain_density(&state, 1.3, &spec, exec).and_then(|g| hbar(&g, &g)) {
        Ok(h) => out.push(check("H of equal grids", h.abs() < 1e-15, format!("{h:.1e}"))),
        Err(e) => out.push(check("H of equal grids", false, e.to_string())),
    }

    match hseries(
        &state,
        &InitialDensity::Equilibrium,
        PI / 2.0,
        PI / 4.0,
        &spec,
        &config,
        HSeriesOptions::default(),
        exec,
    ) {
        Ok(series) => {
            let worst = series.hbar_values.iter().cloned().fold(0.0, f64::max);
            out.push(check(
                "equilibrium stays put",
                worst < 1e-3,
                format!("max H {worst:.1e}"),
            ));
        }
        Err(e) => out.push(check("equilibrium stays put", false, e.to_string())),
    }

    let twice = reversed_state(&reversed_state(&state, 1.7), 1.7);
    let same = state.modes().iter().zip(twice.modes()).all(|(a, b)| {
        let d = (a.phase - b.phase).rem_euclid(2.0 * PI);
        d.min(2.0 * PI - d) < 1e-9
    });
    out.push(check("reversal is an involution", same, String::new()));

    out
}
