//! Adaptive Runge-Kutta-Fehlberg integration of the guidance equation.
//!
//! A step of size `h` is accepted only when the embedded error estimate of
//! both coordinates is below `|h|·Δ`. Trajectories are validated by rerunning
//! at successively tighter `Δ` until two consecutive endpoints agree.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wavefield::{FieldEvaluator, ModeSuperposition, Position, DEFAULT_NODE_FLOOR};

/// Identifier written into run metadata.
pub const TABLEAU_ID: &str = "fehlberg-4(5)/local-extrapolation";

// Fehlberg 4(5) tableau.
const C: [f64; 6] = [0.0, 0.25, 0.375, 12.0 / 13.0, 1.0, 0.5];
const A: [[f64; 5]; 6] = [
    [0.0; 5],
    [0.25, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 32.0, 9.0 / 32.0, 0.0, 0.0, 0.0],
    [1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0, 0.0, 0.0],
    [439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0, 0.0],
    [-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
];
// Fifth-order weights; the fourth-order solution only enters through ERR.
const B5: [f64; 6] = [
    16.0 / 135.0,
    0.0,
    6656.0 / 12825.0,
    28561.0 / 56430.0,
    -9.0 / 50.0,
    2.0 / 55.0,
];
// B5 - B4
const ERR: [f64; 6] = [
    1.0 / 360.0,
    0.0,
    -128.0 / 4275.0,
    -2197.0 / 75240.0,
    1.0 / 50.0,
    2.0 / 55.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    /// First rung of the tolerance ladder.
    pub delta_start: f64,
    pub delta_min: f64,
    pub delta_ladder_factor: f64,
    /// Maximum endpoint distance between consecutive rungs for validation.
    pub global_error_threshold: f64,
    /// Cap on attempted steps per single-Δ run.
    pub max_steps: u64,
    pub node_floor: f64,
    pub safety_factor: f64,
    pub controller_exponent: f64,
    /// Initial step as a fraction of the integration span.
    pub initial_step_fraction: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            delta_start: 1e-6,
            delta_min: 1e-12,
            delta_ladder_factor: 10.0,
            global_error_threshold: 0.01,
            max_steps: 100_000_000,
            node_floor: DEFAULT_NODE_FLOOR,
            safety_factor: 0.9,
            controller_exponent: 0.2,
            initial_step_fraction: 1e-4,
        }
    }
}

impl IntegratorConfig {
    /// Settings for laptop-sized runs: same ladder, tighter step budget.
    pub fn desk() -> Self {
        Self {
            max_steps: 2_000_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("delta_start", self.delta_start),
            ("delta_min", self.delta_min),
            ("global_error_threshold", self.global_error_threshold),
            ("node_floor", self.node_floor),
            ("safety_factor", self.safety_factor),
            ("controller_exponent", self.controller_exponent),
            ("initial_step_fraction", self.initial_step_fraction),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0, got {value}")));
            }
        }
        if self.delta_min > self.delta_start {
            return Err(Error::InvalidConfig(format!(
                "delta_min {} exceeds delta_start {}",
                self.delta_min, self.delta_start
            )));
        }
        if !(self.delta_ladder_factor > 1.0) {
            return Err(Error::InvalidConfig("delta_ladder_factor must be > 1".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be > 0".into()));
        }
        Ok(())
    }

    /// The Δ values tried by [`integrate_validated`], loosest first.
    pub fn ladder(&self) -> Vec<f64> {
        let mut out = vec![self.delta_start];
        let mut level = 0;
        loop {
            level += 1;
            let next = self.delta_start / self.delta_ladder_factor.powi(level);
            // tolerate the rounding of repeated division
            if next < self.delta_min * (1.0 - 1e-9) {
                break;
            }
            out.push(next);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrajectoryStatus {
    /// Single-Δ run that reached its final time.
    Completed,
    /// Two consecutive ladder rungs agreed within the global error threshold.
    Validated,
    /// Ladder exhausted at `delta_min`, or the step size underflowed at a wall.
    ToleranceFloorReached,
    /// The step budget ran out. `retained` is true when an earlier, looser
    /// rung finished and its endpoint was kept.
    StepLimitExceeded { retained: bool },
}

impl TrajectoryStatus {
    /// Whether the endpoint can be used as-is (possibly unvalidated).
    pub fn has_endpoint(&self) -> bool {
        !matches!(self, TrajectoryStatus::StepLimitExceeded { retained: false })
    }

    pub fn label(&self) -> &'static str {
        match self {
            TrajectoryStatus::Completed => "completed",
            TrajectoryStatus::Validated => "validated",
            TrajectoryStatus::ToleranceFloorReached => "tolerance_floor",
            TrajectoryStatus::StepLimitExceeded { retained: true } => "step_limit_retained",
            TrajectoryStatus::StepLimitExceeded { retained: false } => "step_limit",
        }
    }
}

/// One accepted step of a recorded trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub pos: Position,
    /// Step that produced this point (0 for the start).
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryResult {
    pub endpoint: Position,
    pub status: TrajectoryStatus,
    pub delta_used: f64,
    pub steps_taken: u64,
    pub samples: Option<Vec<TrajectorySample>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceSeries {
    pub times: Vec<f64>,
    pub separations: Vec<f64>,
}

enum Rejection {
    Wall,
    Node(Error),
}

/// Integrates the guidance equation from `t0` to `t1` at fixed `delta`.
///
/// `t1 < t0` integrates backwards. Node hits and box exits reject the step
/// and halve it; if halving underflows at a node the node error is returned,
/// at a wall the run ends with [`TrajectoryStatus::ToleranceFloorReached`].
pub fn integrate(
    state: &ModeSuperposition,
    pos0: Position,
    t0: f64,
    t1: f64,
    delta: f64,
    config: &IntegratorConfig,
) -> Result<TrajectoryResult> {
    run(state, pos0, t0, t1, delta, config, None)
}

/// As [`integrate`], additionally keeping every accepted step.
pub fn integrate_recorded(
    state: &ModeSuperposition,
    pos0: Position,
    t0: f64,
    t1: f64,
    delta: f64,
    config: &IntegratorConfig,
) -> Result<TrajectoryResult> {
    let mut samples = vec![TrajectorySample {
        t: t0,
        pos: pos0,
        h: 0.0,
    }];
    let mut result = run(state, pos0, t0, t1, delta, config, Some(&mut samples))?;
    result.samples = Some(samples);
    Ok(result)
}

fn run(
    state: &ModeSuperposition,
    pos0: Position,
    t0: f64,
    t1: f64,
    delta: f64,
    config: &IntegratorConfig,
    mut record: Option<&mut Vec<TrajectorySample>>,
) -> Result<TrajectoryResult> {
    if !pos0.in_box() {
        return Err(Error::InvalidConfig(format!(
            "start point ({}, {}) lies outside the box",
            pos0.x, pos0.y
        )));
    }
    let span = (t1 - t0).abs();
    let mut result = TrajectoryResult {
        endpoint: pos0,
        status: TrajectoryStatus::Completed,
        delta_used: delta,
        steps_taken: 0,
        samples: None,
    };
    if span == 0.0 {
        return Ok(result);
    }
    let dir = (t1 - t0).signum();
    let mut eval = state.evaluator(t0);
    let mut t = t0;
    let mut pos = pos0;
    let mut h = config.initial_step_fraction * span;
    // smallest meaningful step at the current time scale
    let h_floor = 1e-15 * t0.abs().max(t1.abs()).max(1.0);
    let mut attempts: u64 = 0;

    // the velocity at the start of a step is reused after a rejection
    let mut k0 = match eval.velocity(pos, config.node_floor) {
        Ok(v) => Some(v),
        Err(_) => None,
    };

    loop {
        let remaining = (t1 - t) * dir;
        if remaining <= 0.0 {
            break;
        }
        let last = h >= remaining;
        let step = if last { remaining } else { h };
        if attempts >= config.max_steps {
            result.endpoint = pos;
            result.status = TrajectoryStatus::StepLimitExceeded { retained: false };
            result.steps_taken = attempts;
            return Ok(result);
        }
        attempts += 1;

        let outcome = match k0 {
            Some(start) => fehlberg_step(&mut eval, t, pos, dir * step, start, config.node_floor),
            None => Err(Rejection::Node(Error::NodeSingularity {
                x: pos.x,
                y: pos.y,
                density: eval.density(pos),
            })),
        };
        match outcome {
            Ok((next, err)) => {
                let tol = step * delta;
                let worst = err[0].abs().max(err[1].abs());
                if err[0].abs() < tol && err[1].abs() < tol {
                    t = if last { t1 } else { t + dir * step };
                    pos = next;
                    if let Some(rec) = record.as_deref_mut() {
                        rec.push(TrajectorySample {
                            t,
                            pos,
                            h: dir * step,
                        });
                    }
                    let grow = if worst > 0.0 {
                        config.safety_factor * (tol / worst).powf(config.controller_exponent)
                    } else {
                        10.0
                    };
                    h = step * grow.clamp(0.1, 10.0);
                    if t != t1 {
                        eval.set_time(t);
                        k0 = eval.velocity(pos, config.node_floor).ok();
                    }
                } else {
                    let shrink = config.safety_factor * (tol / worst).powf(config.controller_exponent);
                    h = step * shrink.clamp(0.1, 1.0);
                }
            }
            Err(rejection) => {
                h = step * 0.5;
                if h < h_floor {
                    return match rejection {
                        Rejection::Node(e) => Err(e),
                        Rejection::Wall => {
                            result.endpoint = pos;
                            result.status = TrajectoryStatus::ToleranceFloorReached;
                            result.steps_taken = attempts;
                            Ok(result)
                        }
                    };
                }
            }
        }
        if !(h >= h_floor) {
            // controller collapse on an accepted or rejected step; treated like a wall stall
            result.endpoint = pos;
            result.status = TrajectoryStatus::ToleranceFloorReached;
            result.steps_taken = attempts;
            return Ok(result);
        }
    }
    result.endpoint = pos;
    result.steps_taken = attempts;
    Ok(result)
}

/// One Fehlberg step of signed size `h`. Returns the fifth-order point and the
/// per-coordinate error estimate.
#[inline]
fn fehlberg_step(
    eval: &mut FieldEvaluator<'_>,
    t: f64,
    pos: Position,
    h: f64,
    k0: [f64; 2],
    node_floor: f64,
) -> std::result::Result<(Position, [f64; 2]), Rejection> {
    let mut k = [[0.0f64; 2]; 6];
    k[0] = k0;
    for stage in 1..6 {
        let mut dx = 0.0;
        let mut dy = 0.0;
        for (j, kj) in k.iter().enumerate().take(stage) {
            dx += A[stage][j] * kj[0];
            dy += A[stage][j] * kj[1];
        }
        let p = Position::new(pos.x + h * dx, pos.y + h * dy);
        if !p.in_box() {
            return Err(Rejection::Wall);
        }
        eval.set_time(t + C[stage] * h);
        k[stage] = eval.velocity(p, node_floor).map_err(Rejection::Node)?;
    }
    let mut next = pos;
    let mut err = [0.0; 2];
    for (i, ki) in k.iter().enumerate() {
        next.x += h * B5[i] * ki[0];
        next.y += h * B5[i] * ki[1];
        err[0] += h * ERR[i] * ki[0];
        err[1] += h * ERR[i] * ki[1];
    }
    if !next.in_box() {
        return Err(Rejection::Wall);
    }
    Ok((next, err))
}

/// Runs the tolerance ladder until two consecutive rungs agree.
///
/// Step-budget handling: if the first rung runs out of steps the result has
/// no usable endpoint; if a later rung does, the previous rung's endpoint is
/// kept. Reaching `delta_min` without agreement keeps the `delta_min` run.
pub fn integrate_validated(
    state: &ModeSuperposition,
    pos0: Position,
    t0: f64,
    t1: f64,
    config: &IntegratorConfig,
) -> Result<TrajectoryResult> {
    let ladder = config.ladder();
    let mut prev = integrate(state, pos0, t0, t1, ladder[0], config)?;
    let mut total_steps = prev.steps_taken;
    if t0 == t1 {
        prev.status = TrajectoryStatus::Validated;
        return Ok(prev);
    }
    match prev.status {
        TrajectoryStatus::StepLimitExceeded { .. } => return Ok(prev),
        TrajectoryStatus::ToleranceFloorReached => return Ok(prev),
        _ => {}
    }
    for &delta in &ladder[1..] {
        let mut cur = integrate(state, pos0, t0, t1, delta, config)?;
        total_steps += cur.steps_taken;
        match cur.status {
            TrajectoryStatus::StepLimitExceeded { .. } => {
                prev.status = TrajectoryStatus::StepLimitExceeded { retained: true };
                prev.steps_taken = total_steps;
                return Ok(prev);
            }
            TrajectoryStatus::ToleranceFloorReached => {
                cur.steps_taken = total_steps;
                return Ok(cur);
            }
            _ => {}
        }
        if cur.endpoint.distance(prev.endpoint) < config.global_error_threshold {
            cur.status = TrajectoryStatus::Validated;
            cur.steps_taken = total_steps;
            return Ok(cur);
        }
        prev = cur;
    }
    prev.status = TrajectoryStatus::ToleranceFloorReached;
    prev.steps_taken = total_steps;
    Ok(prev)
}

/// Separation of two trajectories started at `t = 0`, sampled at
/// `sample_count` uniform times in `[0, t1]`.
///
/// Each inter-sample segment is integrated with the validation ladder.
pub fn pair_divergence(
    state: &ModeSuperposition,
    pos_a: Position,
    pos_b: Position,
    t1: f64,
    sample_count: usize,
    config: &IntegratorConfig,
) -> Result<DivergenceSeries> {
    if sample_count < 2 {
        return Err(Error::InvalidConfig("sample_count must be at least 2".into()));
    }
    let times: Vec<f64> = (0..sample_count)
        .map(|k| t1 * k as f64 / (sample_count - 1) as f64)
        .collect();
    let mut a = pos_a;
    let mut b = pos_b;
    let mut separations = vec![a.distance(b)];
    for w in times.windows(2) {
        a = integrate_validated(state, a, w[0], w[1], config)?.endpoint;
        b = if pos_a == pos_b {
            a
        } else {
            integrate_validated(state, b, w[0], w[1], config)?.endpoint
        };
        separations.push(a.distance(b));
    }
    Ok(DivergenceSeries { times, separations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn tableau_is_consistent() {
        for (i, row) in A.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            assert!((sum - C[i]).abs() < 1e-14, "row {i}");
        }
        assert!((B5.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(ERR.iter().sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn ladder_descends_to_delta_min() {
        let ladder = IntegratorConfig::default().ladder();
        assert_eq!(ladder.len(), 7);
        assert!((ladder[6] - 1e-12).abs() < 1e-24);
    }

    #[test]
    fn stationary_eigenstate_does_not_move() {
        let state = ModeSuperposition::eigenstate(1, 1, 0.0).unwrap();
        let pos = Position::new(1.0, 1.0);
        let r = integrate(&state, pos, 0.0, 4.0 * PI, 1e-6, &IntegratorConfig::default()).unwrap();
        // velocity is zero up to rounding in Im(ψ*∇ψ)
        assert!(r.endpoint.distance(pos) < 1e-12);
        assert_eq!(r.status, TrajectoryStatus::Completed);
    }

    #[test]
    fn zero_length_run_is_validated() {
        let state = ModeSuperposition::default_box16();
        let pos = Position::new(0.4, 2.0);
        let r = integrate_validated(&state, pos, 1.0, 1.0, &IntegratorConfig::default()).unwrap();
        assert_eq!(r.endpoint, pos);
        assert_eq!(r.status, TrajectoryStatus::Validated);
    }

    #[test]
    fn tiny_step_budget_is_reported() {
        let state = ModeSuperposition::default_box16();
        let config = IntegratorConfig {
            max_steps: 10,
            ..IntegratorConfig::default()
        };
        let r = integrate(&state, Position::new(1.0, 2.0), 0.0, PI, 1e-6, &config).unwrap();
        assert_eq!(r.status, TrajectoryStatus::StepLimitExceeded { retained: false });
        let v = integrate_validated(&state, Position::new(1.0, 2.0), 0.0, PI, &config).unwrap();
        assert!(!v.status.has_endpoint());
    }

    #[test]
    fn recorded_run_matches_plain_run() {
        let state = ModeSuperposition::default_box16();
        let config = IntegratorConfig::default();
        let p = Position::new(2.2, 0.9);
        let plain = integrate(&state, p, 0.0, 1.0, 1e-6, &config).unwrap();
        let rec = integrate_recorded(&state, p, 0.0, 1.0, 1e-6, &config).unwrap();
        assert_eq!(plain.endpoint, rec.endpoint);
        let samples = rec.samples.unwrap();
        assert_eq!(samples.last().unwrap().t, 1.0);
        assert!(samples.iter().all(|s| s.pos.in_box()));
    }

    #[test]
    fn identical_pair_never_separates() {
        let state = ModeSuperposition::default_box16();
        let p = Position::new(1.3, 1.9);
        let series = pair_divergence(&state, p, p, 2.0, 5, &IntegratorConfig::default()).unwrap();
        assert!(series.separations.iter().all(|&s| s == 0.0));
        assert_eq!(series.times.len(), series.separations.len());
    }

    #[test]
    fn eigenstate_pair_keeps_its_separation() {
        let state = ModeSuperposition::eigenstate(2, 1, 0.3).unwrap();
        let a = Position::new(1.0, 1.0);
        let b = Position::new(1.003, 1.004);
        let series = pair_divergence(&state, a, b, 4.0 * PI, 4, &IntegratorConfig::default()).unwrap();
        for s in &series.separations {
            assert!((s - 0.005).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let bad = IntegratorConfig {
            delta_min: 1e-3,
            ..IntegratorConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(IntegratorConfig::default().validate().is_ok());
    }
}
