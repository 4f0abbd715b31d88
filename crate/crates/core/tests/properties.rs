mod common;

use std::f64::consts::PI;

use common::{
    cell_grid, cell_means_within_bounds, continuity_residual, equilibrium_samples, random_points,
    roundtrip_errors, velocity_phase_mismatch,
};
use pilotwave::coarsegrain::{coarse_grain, hbar, CoarseGrainSpec};
use pilotwave::integrator::IntegratorConfig;
use pilotwave::lattice::{Lattice, SampledField};
use pilotwave::wavefield::{ModeSuperposition, Position};
use pilotwave::Execution;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 1000,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn hbar_is_a_divergence(
        a in prop::collection::vec(0.01f64..10.0, 64),
        b in prop::collection::vec(0.01f64..10.0, 64),
        scale in 0.1f64..10.0,
    ) {
        let ga = cell_grid(a.clone(), 8);
        let gb = cell_grid(b.clone(), 8);
        let h = hbar(&ga, &gb).unwrap();
        prop_assert!(h >= 0.0);
        let differ = a.iter().zip(&b).any(|(x, y)| (x / y - a[0] / b[0]).abs() > 1e-9);
        if differ {
            prop_assert!(h > 0.0);
        }
        // proportional grids normalize to the same distribution
        let gs = cell_grid(a.iter().map(|v| v * scale).collect(), 8);
        prop_assert!(hbar(&ga, &gs).unwrap().abs() < 1e-12);
        prop_assert_eq!(hbar(&ga, &ga).unwrap(), 0.0);
    }

    #[test]
    fn cell_means_lie_within_their_points(
        cells in prop::sample::select(vec![2usize, 4, 8]),
        samples in 1usize..5,
        seed in any::<u64>(),
        overlap in any::<bool>(),
    ) {
        let n = cells * samples;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let field = SampledField::new(Lattice::square(n).unwrap(), values).unwrap();
        let spec = if overlap {
            CoarseGrainSpec::overlapping(cells, 0.5, samples)
        } else {
            CoarseGrainSpec::non_overlapping(cells, samples)
        };
        let grid = coarse_grain(&field, &spec).unwrap();
        prop_assert!(cell_means_within_bounds(&field, &grid));
    }
}

#[test]
fn forward_backward_roundtrip() {
    let state = ModeSuperposition::default_box16();
    let starts = equilibrium_samples(&state, 1000, 11);
    let errors = roundtrip_errors(&state, &starts, PI, &IntegratorConfig::desk());
    let good = errors
        .iter()
        .filter(|e| matches!(e, Some(d) if *d < 0.01))
        .count();
    assert!(good >= 990, "only {good} of 1000 round trips within 0.01");
}

#[test]
fn velocity_is_the_phase_gradient() {
    let state = ModeSuperposition::default_box16();
    let worst = velocity_phase_mismatch(&state, 100, 3);
    assert!(worst < 1e-4, "relative mismatch {worst}");
}

#[test]
fn gradient_matches_finite_differences() {
    let state = ModeSuperposition::default_box16();
    let h = 1e-6;
    for (k, p) in random_points(100, 5, 0.05).into_iter().enumerate() {
        let t = 0.21 * k as f64;
        let s = state.field_sample(p, t, 0.0).unwrap();
        let psi = |dx: f64, dy: f64| state.psi_at(Position::new(p.x + dx, p.y + dy), t);
        let fx = (psi(h, 0.0) - psi(-h, 0.0)) / (2.0 * h);
        let fy = (psi(0.0, h) - psi(0.0, -h)) / (2.0 * h);
        assert!((fx - s.grad_psi[0]).norm() < 1e-5);
        assert!((fy - s.grad_psi[1]).norm() < 1e-5);
    }
}

#[test]
fn continuity_holds() {
    let state = ModeSuperposition::default_box16();
    for (k, p) in random_points(100, 7, 0.05).into_iter().enumerate() {
        let (drho, div) = state.continuity_terms(p, 0.53 * k as f64);
        assert!((drho + div).abs() < 1e-12);
    }
    let worst = continuity_residual(&state, 100, 7);
    assert!(worst < 1e-5, "residual {worst}");
}

#[test]
fn density_stays_normalized() {
    let state = ModeSuperposition::default_box16();
    let lattice = Lattice::square(512).unwrap();
    for t in [0.0, PI, 2.0 * PI, 4.0 * PI] {
        let eval = state.evaluator(t);
        let mass = SampledField::from_fn(lattice, Execution::default(), |p| eval.density(p)).integral();
        assert!((mass - 1.0).abs() < 1e-6, "mass {mass} at t = {t}");
    }
}

#[test]
fn wave_function_has_period_four_pi() {
    let state = ModeSuperposition::default_box16();
    for p in Lattice::square(64).unwrap().positions() {
        assert!((state.psi_at(p, 4.0 * PI) - state.psi_at(p, 0.0)).norm() < 1e-10);
        let fast = state.evaluator(4.0 * PI).psi_and_gradient(p).0;
        assert!((fast - state.psi_at(p, 0.0)).norm() < 1e-10);
    }
}
