//! Analytic wavefunction of a particle in the square box `[0, π]²`.
//!
//! The state is a finite superposition of box eigenmodes
//! `φ_mn(x, y) = (2/π) sin(mx) sin(ny)` with energies `E_mn = (m² + n²)/2`
//! (unit mass, ħ = 1). Time evolution is exact: each mode only picks up the
//! phase `exp(-i E_mn t)`, so nothing here integrates a PDE.

use std::f64::consts::{FRAC_2_PI, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of the box.
pub const BOX_SIDE: f64 = PI;

/// Density floor below which the guidance velocity is treated as singular.
pub const DEFAULT_NODE_FLOOR: f64 = 1e-12;

/// Phases of the 16-mode state used for the relaxation runs, indexed `[m-1][n-1]`.
pub const DEFAULT_PHASES: [[f64; 4]; 4] = [
    [5.1306, 2.0056, 4.1172, 3.3871],
    [6.2013, 4.6598, 1.8770, 4.3033],
    [4.0145, 6.1142, 5.4401, 1.9292],
    [3.4015, 6.2109, 6.0370, 5.9159],
];

/// Version tag of the bundled default mode table.
pub const DEFAULT_STATE_VERSION: &str = "box16-v1";

/// A single box eigenmode with its amplitude modulus and phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub m: u32,
    pub n: u32,
    pub amplitude: f64,
    pub phase: f64,
}

impl Mode {
    pub fn new(m: u32, n: u32, amplitude: f64, phase: f64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidState(format!(
                "mode indices must be positive, got ({m}, {n})"
            )));
        }
        if !(amplitude >= 0.0 && amplitude.is_finite()) || !phase.is_finite() {
            return Err(Error::InvalidState(format!(
                "mode ({m}, {n}) has a non-finite or negative amplitude/phase"
            )));
        }
        Ok(Self {
            m,
            n,
            amplitude,
            phase,
        })
    }

    /// `(m² + n²)/2`.
    pub fn energy(&self) -> f64 {
        0.5 * f64::from(self.twice_energy())
    }

    /// `m² + n²`, always an integer.
    pub fn twice_energy(&self) -> u32 {
        self.m * self.m + self.n * self.n
    }

    /// Real eigenfunction `(2/π) sin(mx) sin(ny)`.
    pub fn value(&self, pos: Position) -> f64 {
        FRAC_2_PI * (f64::from(self.m) * pos.x).sin() * (f64::from(self.n) * pos.y).sin()
    }
}

/// A point of the closed box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn in_box(&self) -> bool {
        (0.0..=BOX_SIDE).contains(&self.x) && (0.0..=BOX_SIDE).contains(&self.y)
    }

    pub fn distance(&self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Everything the dynamics needs at one spacetime point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub psi: Complex64,
    pub density: f64,
    pub grad_psi: [Complex64; 2],
    /// `arg ψ` in `(-π, π]`.
    pub phase: f64,
    pub velocity: [f64; 2],
}

/// Normalized superposition of box eigenmodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSuperposition {
    modes: Vec<Mode>,
    max_m: usize,
    max_n: usize,
    max_twice_energy: usize,
    /// `(2/π) a e^{iθ}` per mode.
    base: Vec<Complex64>,
    index: Vec<ModeIndex>,
}

/// Per-mode lookups used on the hot path.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ModeIndex {
    m: usize,
    n: usize,
    mf: f64,
    nf: f64,
    twice_energy: usize,
}

impl ModeSuperposition {
    pub fn new(modes: Vec<Mode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidState("empty mode table".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for mode in &modes {
            // re-run the per-mode checks for tables built by hand or deserialized
            Mode::new(mode.m, mode.n, mode.amplitude, mode.phase)?;
            if !seen.insert((mode.m, mode.n)) {
                return Err(Error::InvalidState(format!(
                    "duplicate mode ({}, {})",
                    mode.m, mode.n
                )));
            }
        }
        let norm: f64 = modes.iter().map(|m| m.amplitude * m.amplitude).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!(
                "amplitudes are not normalized: sum of squares = {norm}"
            )));
        }
        let max_m = modes.iter().map(|m| m.m as usize).max().unwrap_or(1);
        let max_n = modes.iter().map(|m| m.n as usize).max().unwrap_or(1);
        let max_twice_energy = modes.iter().map(|m| m.twice_energy() as usize).max().unwrap_or(2);
        let base = modes
            .iter()
            .map(|m| Complex64::from_polar(FRAC_2_PI * m.amplitude, m.phase))
            .collect();
        let index = modes
            .iter()
            .map(|m| ModeIndex {
                m: m.m as usize,
                n: m.n as usize,
                mf: f64::from(m.m),
                nf: f64::from(m.n),
                twice_energy: m.twice_energy() as usize,
            })
            .collect();
        Ok(Self {
            modes,
            max_m,
            max_n,
            max_twice_energy,
            base,
            index,
        })
    }

    /// The 16-mode equal-amplitude state with the tabulated phases.
    pub fn default_box16() -> Self {
        let modes = (1..=4u32)
            .flat_map(|m| {
                (1..=4u32).map(move |n| Mode {
                    m,
                    n,
                    amplitude: 0.25,
                    phase: DEFAULT_PHASES[(m - 1) as usize][(n - 1) as usize],
                })
            })
            .collect();
        Self::new(modes).expect("bundled state is valid")
    }

    /// A single eigenmode with unit amplitude.
    pub fn eigenstate(m: u32, n: u32, phase: f64) -> Result<Self> {
        Self::new(vec![Mode::new(m, n, 1.0, phase)?])
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let modes: Vec<Mode> = serde_json::from_str(text)?;
        Self::new(modes)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.modes).expect("modes serialize")
    }

    /// Stable hash of the mode table, used to tie outputs to the state.
    pub fn state_hash(&self) -> String {
        // FNV-1a over the exact bit patterns
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for mode in &self.modes {
            eat(&mode.m.to_le_bytes());
            eat(&mode.n.to_le_bytes());
            eat(&mode.amplitude.to_bits().to_le_bytes());
            eat(&mode.phase.to_bits().to_le_bytes());
        }
        format!("{h:016x}")
    }

    /// ψ(pos, t) by direct summation.
    pub fn psi_at(&self, pos: Position, t: f64) -> Complex64 {
        self.modes
            .iter()
            .map(|mode| {
                let arg = mode.phase - mode.energy() * t;
                Complex64::from_polar(mode.amplitude, arg) * mode.value(pos)
            })
            .sum()
    }

    /// |ψ(pos, t)|².
    pub fn density_at(&self, pos: Position, t: f64) -> f64 {
        self.psi_at(pos, t).norm_sqr()
    }

    /// Field, gradient and guidance velocity at `(pos, t)`.
    ///
    /// Fails with [`Error::NodeSingularity`] when `|ψ|² < node_floor`.
    pub fn field_sample(&self, pos: Position, t: f64, node_floor: f64) -> Result<FieldSample> {
        self.evaluator(t).sample(pos, node_floor)
    }

    /// Precomputes the time-dependent coefficients so repeated evaluations at
    /// the same instant only pay for the spatial factors.
    pub fn evaluator(&self, t: f64) -> FieldEvaluator<'_> {
        let mut eval = FieldEvaluator {
            state: self,
            coeffs: vec![Complex64::default(); self.modes.len()],
            powers: vec![Complex64::default(); self.max_twice_energy + 1],
            time: f64::NAN,
        };
        eval.set_time(t);
        eval
    }

    /// Guidance velocity `Im(ψ* ∇ψ) / |ψ|²`.
    pub fn velocity(&self, pos: Position, t: f64, node_floor: f64) -> Result<[f64; 2]> {
        self.field_sample(pos, t, node_floor).map(|s| s.velocity)
    }

    /// Quantum energy spread `sqrt(<E²> - <E>²)`.
    pub fn energy_spread(&self) -> f64 {
        let (mut mean, mut second) = (0.0, 0.0);
        for mode in &self.modes {
            let w = mode.amplitude * mode.amplitude;
            let e = mode.energy();
            mean += w * e;
            second += w * e * e;
        }
        (second - mean * mean).max(0.0).sqrt()
    }

    /// `∂|ψ|²/∂t` and `∇·(|ψ|² v)` at one point, both from closed forms.
    ///
    /// Their sum vanishes identically; exposed for consistency checks.
    pub fn continuity_terms(&self, pos: Position, t: f64) -> (f64, f64) {
        let mut psi = Complex64::default();
        let mut dpsi_dt = Complex64::default();
        let mut lap = Complex64::default();
        for mode in &self.modes {
            let (m, n) = (f64::from(mode.m), f64::from(mode.n));
            let c = Complex64::from_polar(FRAC_2_PI * mode.amplitude, mode.phase - mode.energy() * t);
            let sx = (m * pos.x).sin();
            let sy = (n * pos.y).sin();
            psi += c * sx * sy;
            dpsi_dt += c * Complex64::new(0.0, -mode.energy()) * sx * sy;
            lap += c * (-(m * m + n * n)) * sx * sy;
        }
        let drho_dt = 2.0 * (psi.conj() * dpsi_dt).re;
        // |ψ|² v = Im(ψ* ∇ψ), so ∇·(|ψ|² v) = Im(ψ* ∇²ψ)
        let div_current = (psi.conj() * lap).im;
        (drho_dt, div_current)
    }
}

/// Mode coefficients frozen at one time instant.
#[derive(Debug, Clone)]
pub struct FieldEvaluator<'a> {
    state: &'a ModeSuperposition,
    coeffs: Vec<Complex64>,
    powers: Vec<Complex64>,
    time: f64,
}

impl FieldEvaluator<'_> {
    /// Moves the evaluator to time `t`, reusing its buffers.
    pub fn set_time(&mut self, t: f64) {
        if t.to_bits() == self.time.to_bits() {
            return;
        }
        self.time = t;
        // e^{-iEt} = w^{2E} with w = e^{-it/2} and 2E = m² + n² an integer;
        // w^k = w^{k/2} w^{k-k/2} keeps the product depth logarithmic
        let w = Complex64::from_polar(1.0, -0.5 * t);
        let p = &mut self.powers;
        p[0] = Complex64::new(1.0, 0.0);
        if p.len() > 1 {
            p[1] = w;
        }
        for k in 2..p.len() {
            p[k] = p[k / 2] * p[k - k / 2];
        }
        for ((c, b), ix) in self
            .coeffs
            .iter_mut()
            .zip(&self.state.base)
            .zip(&self.state.index)
        {
            *c = b * p[ix.twice_energy];
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// ψ, ∂ψ/∂x, ∂ψ/∂y at `pos`.
    pub fn psi_and_gradient(&self, pos: Position) -> (Complex64, [Complex64; 2]) {
        // sin(kx), cos(kx) for k = 0..=max by the angle-addition recurrence
        const STACK: usize = 16;
        let (mx, my) = (self.state.max_m, self.state.max_n);
        if mx < STACK && my < STACK {
            let mut sx = [0.0; STACK];
            let mut cx = [0.0; STACK];
            let mut sy = [0.0; STACK];
            let mut cy = [0.0; STACK];
            harmonics(pos.x, &mut sx[..=mx], &mut cx[..=mx]);
            harmonics(pos.y, &mut sy[..=my], &mut cy[..=my]);
            self.accumulate(&sx, &cx, &sy, &cy)
        } else {
            let mut sx = vec![0.0; mx + 1];
            let mut cx = vec![0.0; mx + 1];
            let mut sy = vec![0.0; my + 1];
            let mut cy = vec![0.0; my + 1];
            harmonics(pos.x, &mut sx, &mut cx);
            harmonics(pos.y, &mut sy, &mut cy);
            self.accumulate(&sx, &cx, &sy, &cy)
        }
    }

    fn accumulate(&self, sx: &[f64], cx: &[f64], sy: &[f64], cy: &[f64]) -> (Complex64, [Complex64; 2]) {
        let mut psi = Complex64::default();
        let mut gx = Complex64::default();
        let mut gy = Complex64::default();
        for (ix, c) in self.state.index.iter().zip(&self.coeffs) {
            let (sxm, syn) = (sx[ix.m], sy[ix.n]);
            psi += c * (sxm * syn);
            gx += c * (ix.mf * cx[ix.m] * syn);
            gy += c * (ix.nf * sxm * cy[ix.n]);
        }
        (psi, [gx, gy])
    }

    pub fn sample(&self, pos: Position, node_floor: f64) -> Result<FieldSample> {
        let (psi, grad_psi) = self.psi_and_gradient(pos);
        let density = psi.norm_sqr();
        if !(density >= node_floor) || density == 0.0 {
            return Err(Error::NodeSingularity {
                x: pos.x,
                y: pos.y,
                density,
            });
        }
        let velocity = [
            (psi.conj() * grad_psi[0]).im / density,
            (psi.conj() * grad_psi[1]).im / density,
        ];
        Ok(FieldSample {
            psi,
            density,
            grad_psi,
            phase: psi.arg(),
            velocity,
        })
    }

    /// Velocity only; the hot path of the integrator.
    #[inline]
    pub fn velocity(&self, pos: Position, node_floor: f64) -> Result<[f64; 2]> {
        let (psi, g) = self.psi_and_gradient(pos);
        let density = psi.norm_sqr();
        if !(density >= node_floor) || density == 0.0 {
            return Err(Error::NodeSingularity {
                x: pos.x,
                y: pos.y,
                density,
            });
        }
        Ok([(psi.conj() * g[0]).im / density, (psi.conj() * g[1]).im / density])
    }

    pub fn density(&self, pos: Position) -> f64 {
        self.psi_and_gradient(pos).0.norm_sqr()
    }
}

fn harmonics(angle: f64, s: &mut [f64], c: &mut [f64]) {
    let (s1, c1) = angle.sin_cos();
    s[0] = 0.0;
    c[0] = 1.0;
    if s.len() > 1 {
        s[1] = s1;
        c[1] = c1;
    }
    for k in 2..s.len() {
        s[k] = s[k - 1] * c1 + c[k - 1] * s1;
        c[k] = c[k - 1] * c1 - s[k - 1] * s1;
    }
}

/// `(2/π) sin(mx) sin(ny)` for a bare mode.
pub fn mode_value(mode: &Mode, pos: Position) -> f64 {
    mode.value(pos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn mode_values_at_reduced_arguments() {
        let center = Position::new(FRAC_PI_2, FRAC_PI_2);
        let m11 = Mode::new(1, 1, 1.0, 0.0).unwrap();
        let m22 = Mode::new(2, 2, 1.0, 0.0).unwrap();
        let m34 = Mode::new(3, 4, 1.0, 0.0).unwrap();
        assert!((mode_value(&m11, center) - 2.0 / PI).abs() < 1e-15);
        assert!(mode_value(&m22, center).abs() < 1e-15);
        let p = Position::new(PI / 6.0, PI / 8.0);
        assert!((mode_value(&m34, p) - 2.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(Mode::new(0, 1, 1.0, 0.0).is_err());
        let dup = vec![
            Mode::new(1, 1, 0.5f64.sqrt(), 0.0).unwrap(),
            Mode::new(1, 1, 0.5f64.sqrt(), 1.0).unwrap(),
        ];
        assert!(ModeSuperposition::new(dup).is_err());
        let unnormalized = vec![Mode::new(1, 1, 0.9, 0.0).unwrap()];
        assert!(ModeSuperposition::new(unnormalized).is_err());
    }

    #[test]
    fn single_mode_evolves_by_a_global_phase() {
        let state = ModeSuperposition::eigenstate(1, 1, 0.0).unwrap();
        let pos = Position::new(0.7, 2.1);
        let phi = state.modes()[0].value(pos);
        for t in [0.0, 0.3, 1.7, 5.0] {
            let expected = Complex64::from_polar(phi, -t);
            assert!((state.psi_at(pos, t) - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn center_value_only_sees_odd_modes() {
        let state = ModeSuperposition::default_box16();
        let center = Position::new(FRAC_PI_2, FRAC_PI_2);
        // sin(kπ/2) = 1, 0, -1, 0 for k = 1..4
        let sign = [1.0, 0.0, -1.0, 0.0];
        let mut expected = Complex64::default();
        for m in 1..=4 {
            for n in 1..=4 {
                let amp = 0.25 * (2.0 / PI) * sign[m - 1] * sign[n - 1];
                expected += Complex64::from_polar(1.0, DEFAULT_PHASES[m - 1][n - 1]) * amp;
            }
        }
        let got = state.psi_at(center, 0.0);
        assert!((got - expected).norm() < 1e-14, "{got} vs {expected}");
        let fast = state.evaluator(0.0).psi_and_gradient(center).0;
        assert!((fast - expected).norm() < 1e-13);
    }

    #[test]
    fn eigenstate_has_no_velocity() {
        let state = ModeSuperposition::eigenstate(1, 1, 0.4).unwrap();
        for t in [0.0, 1.0, 3.3] {
            let v = state
                .velocity(Position::new(1.2, 0.4), t, DEFAULT_NODE_FLOOR)
                .unwrap();
            assert!(v[0].abs() < 1e-14 && v[1].abs() < 1e-14);
        }
    }

    #[test]
    fn wall_is_a_node() {
        let state = ModeSuperposition::default_box16();
        let err = state
            .field_sample(Position::new(0.0, 1.0), 0.3, DEFAULT_NODE_FLOOR)
            .unwrap_err();
        assert!(matches!(err, Error::NodeSingularity { .. }));
    }

    #[test]
    fn energy_spread_cases() {
        let state = ModeSuperposition::default_box16();
        assert!((state.energy_spread() - 16.125f64.sqrt()).abs() < 1e-12);
        let single = ModeSuperposition::eigenstate(2, 3, 0.0).unwrap();
        assert_eq!(single.energy_spread(), 0.0);
        let a = 0.5f64.sqrt();
        let pair = ModeSuperposition::new(vec![
            Mode::new(1, 1, a, 0.0).unwrap(),
            Mode::new(3, 2, a, 1.0).unwrap(),
        ])
        .unwrap();
        assert!((pair.energy_spread() - (6.5 - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn fast_and_direct_evaluation_agree() {
        let state = ModeSuperposition::default_box16();
        for (i, t) in [0.0, 0.9, 7.3, 12.0].iter().enumerate() {
            let pos = Position::new(0.3 + 0.6 * i as f64, 2.9 - 0.5 * i as f64);
            let direct = state.psi_at(pos, *t);
            let fast = state.evaluator(*t).psi_and_gradient(pos).0;
            assert!((direct - fast).norm() < 1e-13);
        }
    }

    #[test]
    fn json_roundtrip_preserves_hash() {
        let state = ModeSuperposition::default_box16();
        let back = ModeSuperposition::from_json(&state.to_json()).unwrap();
        assert_eq!(state.state_hash(), back.state_hash());
    }
}
