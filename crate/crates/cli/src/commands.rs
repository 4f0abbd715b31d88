use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

use pilotwave::coarsegrain::{coarse_grain, CoarseGrainSpec, CoarseMode};
use pilotwave::integrator::{integrate_recorded, integrate_validated, pair_divergence};
use pilotwave::io::{self, DensitySidecar, Manifest};
use pilotwave::lattice::{Lattice, SampledField};
use pilotwave::relaxation::{self, fit_series, hseries, tau_curvature, HSeriesOptions, RelaxationReport};
use pilotwave::transport::{evolve_density, reverse_setup};
use pilotwave::wavefield::{Position, BOX_SIDE};
use pilotwave::Execution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(pilotwave::Error),
    Failed(String),
}

impl CliError {
    pub fn from_core_config(e: pilotwave::Error) -> Self {
        if e.is_numerical() {
            CliError::Core(e)
        } else {
            CliError::Config(e.to_string())
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(pilotwave::Error::Io(_) | pilotwave::Error::Json(_)) => 1,
            CliError::Core(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<pilotwave::Error> for CliError {
    fn from(e: pilotwave::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Output directory plus the manifest of everything written into it.
struct Outputs {
    root: PathBuf,
    manifest: Manifest,
}

impl Outputs {
    fn new(cfg: &RunConfig, command: &str, extra: serde_json::Value) -> Result<Self> {
        std::fs::create_dir_all(&cfg.output_dir)?;
        let config = serde_json::json!({ "run": cfg.to_json(), "command": extra });
        Ok(Self {
            root: cfg.output_dir.clone(),
            manifest: Manifest::new(command, config),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn record(&mut self, path: &Path) -> Result<()> {
        self.manifest.add(&self.root, path)?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        io::write_json(&path, value)?;
        self.record(&path)
    }

    fn finish(self) -> Result<()> {
        self.manifest.write(&self.root.join("manifest.json"))?;
        println!(
            "wrote {} files to {}",
            self.manifest.files.len() + 1,
            self.root.display()
        );
        Ok(())
    }
}

fn execution(cfg: &RunConfig) -> Result<Execution> {
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = cfg.workers {
            // a second call in the same process keeps the first pool
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            if n == 1 {
                return Ok(Execution::Sequential);
            }
        }
        Ok(Execution::Parallel)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = cfg;
        Ok(Execution::Sequential)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::resolve(&cli.common)?;
    let exec = execution(&cfg)?;
    match cli.command {
        Command::Trajectory { x, y, t0, t1 } => trajectory(&cfg, Position::new(x, y), t0, t1),
        Command::Diverge {
            pairs,
            separation,
            t1,
            samples,
        } => diverge(&cfg, pairs, separation, t1, samples, exec),
        Command::Density { time, overlap_shift } => density(&cfg, time, overlap_shift, exec),
        Command::Hseries {
            horizon,
            interval,
            resample,
        } => {
            let mut cfg = cfg;
            if let Some(h) = horizon {
                cfg.horizon = h;
            }
            if let Some(i) = interval {
                cfg.interval = i;
            }
            if let Some(r) = resample {
                cfg.resample = (r > 0).then_some(r);
            }
            hseries_cmd(&cfg, exec)
        }
        Command::Reverse { tr, interval } => {
            let mut cfg = cfg;
            if let Some(i) = interval {
                cfg.interval = i;
            }
            reverse(&cfg, tr, exec)
        }
        Command::Tau {
            fine_grid,
            rough_only,
        } => tau(&cfg, fine_grid, rough_only, exec),
        Command::Selftest => selftest(exec),
    }
}

fn trajectory(cfg: &RunConfig, start: Position, t0: f64, t1: f64) -> Result<()> {
    if !start.in_box() {
        return Err(CliError::Config(format!(
            "start ({}, {}) is outside the box",
            start.x, start.y
        )));
    }
    let state = cfg.state()?;
    let validated = integrate_validated(&state, start, t0, t1, &cfg.integrator)?;
    let recorded = integrate_recorded(&state, start, t0, t1, validated.delta_used, &cfg.integrator)?;
    let mut out = Outputs::new(
        cfg,
        "trajectory",
        serde_json::json!({"x": start.x, "y": start.y, "t0": t0, "t1": t1}),
    )?;
    let path = out.path("trajectory.csv");
    io::write_trajectory_csv(
        &path,
        recorded.samples.as_deref().unwrap_or(&[]),
        validated.delta_used,
    )?;
    out.record(&path)?;
    out.json(
        "trajectory.json",
        &serde_json::json!({
            "status": validated.status.label(),
            "delta_used": validated.delta_used,
            "steps_taken": validated.steps_taken,
            "endpoint": [validated.endpoint.x, validated.endpoint.y],
            "state_hash": state.state_hash(),
        }),
    )?;
    println!(
        "{} at ({:.6}, {:.6}), delta {:e}",
        validated.status.label(),
        validated.endpoint.x,
        validated.endpoint.y,
        validated.delta_used
    );
    out.finish()
}

#[derive(Serialize)]
struct DivergenceSummary {
    separation: f64,
    t1: f64,
    seed: u64,
    starts: Vec<[f64; 4]>,
    final_separations: Vec<f64>,
    median_final_separation: f64,
}

fn diverge(
    cfg: &RunConfig,
    pairs: usize,
    separation: f64,
    t1: f64,
    samples: usize,
    exec: Execution,
) -> Result<()> {
    if pairs == 0 || !(separation > 0.0) {
        return Err(CliError::Config(
            "need at least one pair and a positive separation".into(),
        ));
    }
    let state = cfg.state()?;
    let starts = random_pairs(cfg.seed, pairs, separation);
    let series = exec.map_indexed(pairs, |k| {
        let (a, b) = starts[k];
        pair_divergence(&state, a, b, t1, samples, &cfg.integrator)
    });
    let mut out = Outputs::new(
        cfg,
        "diverge",
        serde_json::json!({"pairs": pairs, "separation": separation, "t1": t1, "samples": samples}),
    )?;
    let mut finals = Vec::with_capacity(pairs);
    for (k, s) in series.into_iter().enumerate() {
        let s = s?;
        finals.push(*s.separations.last().expect("at least two samples"));
        let path = out.path(&format!("divergence_{k:03}.csv"));
        io::write_divergence_csv(&path, &s)?;
        out.record(&path)?;
    }
    let median = median(&finals);
    out.json(
        "divergence.json",
        &DivergenceSummary {
            separation,
            t1,
            seed: cfg.seed,
            starts: starts.iter().map(|(a, b)| [a.x, a.y, b.x, b.y]).collect(),
            final_separations: finals,
            median_final_separation: median,
        },
    )?;
    println!("median separation at t = {t1:.4}: {median:.4}");
    out.finish()
}

/// Pairs `(a, b)` with `|a - b| = separation`, both at least 0.05 from the walls.
pub fn random_pairs(seed: u64, count: usize, separation: f64) -> Vec<(Position, Position)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let margin = 0.05 + separation;
    (0..count)
        .map(|_| {
            let a = Position::new(
                rng.gen_range(margin..BOX_SIDE - margin),
                rng.gen_range(margin..BOX_SIDE - margin),
            );
            let phi = rng.gen_range(0.0..2.0 * PI);
            let b = Position::new(a.x + separation * phi.cos(), a.y + separation * phi.sin());
            (a, b)
        })
        .collect()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn density(cfg: &RunConfig, time: f64, overlap_shift: Option<f64>, exec: Execution) -> Result<()> {
    let state = cfg.state()?;
    let rho0 = cfg.rho0.build()?;
    let lattice = Lattice::new(cfg.grid.0, cfg.grid.1)?;
    let (map, density) = evolve_density(&state, &rho0, time, lattice, &cfg.integrator, exec)?;
    let mut out = Outputs::new(
        cfg,
        "density",
        serde_json::json!({"time": time, "overlap_shift": overlap_shift}),
    )?;

    let path = out.path("density.csv");
    io::write_density_csv(&path, &density)?;
    out.record(&path)?;
    let path = out.path("rho.txt");
    io::write_field_matrix(&path, &density.rho_field())?;
    out.record(&path)?;
    let eval = state.evaluator(time);
    let psi2 = SampledField::from_fn(lattice, exec, |p| eval.density(p));
    let path = out.path("psi2.txt");
    io::write_field_matrix(&path, &psi2)?;
    out.record(&path)?;
    out.json(
        "density.json",
        &DensitySidecar::new(
            &density,
            &state,
            rho0.label(),
            &cfg.integrator,
            map.non_validated_fraction(),
        ),
    )?;

    let (spec, _) = cfg.coarse_spec()?;
    if spec.lattice()? != lattice {
        eprintln!(
            "note: grid {}x{} does not tile cells of side {}; cell averages skipped",
            lattice.nx, lattice.ny, cfg.epsilon
        );
        return out.finish();
    }
    let spec = CoarseGrainSpec {
        mode: CoarseMode::NonOverlapping,
        ..spec
    };
    let mut specs = vec![("cells", spec)];
    if let Some(shift) = overlap_shift {
        specs.push((
            "smoothed",
            CoarseGrainSpec {
                mode: CoarseMode::Overlapping,
                overlap_shift_fraction: shift,
                ..spec
            },
        ));
    }
    for (prefix, spec) in specs {
        spec.validate()?;
        let rho_cells = coarse_grain(&density.rho_field(), &spec)?;
        let psi_cells = coarse_grain(&psi2, &spec)?;
        for (name, grid) in [("rho", &rho_cells), ("psi2", &psi_cells)] {
            let path = out.path(&format!("{prefix}_{name}.csv"));
            io::write_cellgrid_csv(&path, grid)?;
            out.record(&path)?;
            let path = out.path(&format!("{prefix}_{name}.txt"));
            io::write_cell_matrix(&path, grid)?;
            out.record(&path)?;
        }
    }
    out.finish()
}

fn hseries_cmd(cfg: &RunConfig, exec: Execution) -> Result<()> {
    let state = cfg.state()?;
    let rho0 = cfg.rho0.build()?;
    let (spec, warning) = cfg.coarse_spec()?;
    if let Some(w) = warning {
        eprintln!("warning: {w}");
    }
    let spec = CoarseGrainSpec {
        mode: CoarseMode::NonOverlapping,
        ..spec
    };
    let options = HSeriesOptions {
        resample_samples_per_cell_side: cfg.resample,
    };
    let series = hseries(
        &state,
        &rho0,
        cfg.horizon,
        cfg.interval,
        &spec,
        &cfg.integrator,
        options,
        exec,
    )?;
    let report = RelaxationReport::new(&state, cfg.epsilon).with_series(&series)?;
    let mut out = Outputs::new(cfg, "hseries", serde_json::json!({}))?;
    let path = out.path("hseries.csv");
    io::write_hseries_csv(&path, &series)?;
    out.record(&path)?;
    out.json("samples.json", &series.samples)?;
    out.json("report.json", &report)?;
    for s in &series.samples {
        println!("t = {:8.4}  H = {:.6e}", s.time, s.hbar);
    }
    if let Some(t_c) = report.t_c {
        println!("t_c = {t_c:.4}  r2 = {:.4}", report.r_squared.unwrap_or(f64::NAN));
    }
    out.finish()
}

#[derive(Serialize)]
struct ReverseSummary {
    t_r: f64,
    median_relative_cell_error: f64,
    max_relative_cell_error: f64,
    slope: f64,
    r_squared: f64,
    forward_hbar_at_tr: f64,
}

fn reverse(cfg: &RunConfig, t_r: f64, exec: Execution) -> Result<()> {
    if !(t_r > 0.0) {
        return Err(CliError::Config("--tr must be positive".into()));
    }
    let state = cfg.state()?;
    let rho0 = cfg.rho0.build()?;
    let (spec, warning) = cfg.coarse_spec()?;
    if let Some(w) = warning {
        eprintln!("warning: {w}");
    }
    let spec = CoarseGrainSpec {
        mode: CoarseMode::NonOverlapping,
        ..spec
    };
    let forward = relaxation::snapshot(&state, &rho0, t_r, &spec, &cfg.integrator, exec)?;
    let experiment = reverse_setup(&state, &rho0, &forward.density, t_r, &cfg.integrator);
    let series = hseries(
        &experiment.state,
        &experiment.rho0,
        t_r,
        cfg.interval,
        &spec,
        &cfg.integrator,
        HSeriesOptions::default(),
        exec,
    )?;
    let fit = fit_series(&series)?;

    // ρ'(·, t_r) against the original ρ₀, cell by cell
    let end = relaxation::snapshot(
        &experiment.state,
        &experiment.rho0,
        t_r,
        &spec,
        &cfg.integrator,
        exec,
    )?;
    let lattice = spec.lattice()?;
    let reference = SampledField::from_fn(lattice, exec, |p| rho0.rho(&state, p));
    let back = coarse_grain(&end.density.rho_field(), &spec)?;
    let want = coarse_grain(&reference, &spec)?;
    let errors = relative_cell_errors(&back.values, &want.values);

    let mut out = Outputs::new(cfg, "reverse", serde_json::json!({"t_r": t_r}))?;
    let path = out.path("reverse_hseries.csv");
    io::write_hseries_csv(&path, &series)?;
    out.record(&path)?;
    let path = out.path("reverse_cells.csv");
    io::write_cellgrid_csv(&path, &back)?;
    out.record(&path)?;
    let summary = ReverseSummary {
        t_r,
        median_relative_cell_error: median(&errors),
        max_relative_cell_error: errors.iter().cloned().fold(0.0, f64::max),
        slope: fit.slope,
        r_squared: fit.r_squared,
        forward_hbar_at_tr: forward.hbar,
    };
    out.json("reverse.json", &summary)?;
    println!(
        "median cell error {:.3e}, H slope {:+.4}",
        summary.median_relative_cell_error, summary.slope
    );
    out.finish()
}

/// `|a - b| / |b|` per cell, skipping cells where `b` vanishes.
pub fn relative_cell_errors(got: &[f64], want: &[f64]) -> Vec<f64> {
    got.iter()
        .zip(want)
        .filter(|(_, w)| w.abs() > 0.0)
        .map(|(g, w)| (g - w).abs() / w.abs())
        .collect()
}

fn tau(cfg: &RunConfig, fine_grid: usize, rough_only: bool, exec: Execution) -> Result<()> {
    let state = cfg.state()?;
    let mut report = RelaxationReport::new(&state, cfg.epsilon);
    let mut curvature = None;
    let mut refined = None;
    if !rough_only {
        let rho0 = cfg.rho0.build()?;
        let c = tau_curvature(&state, &rho0, cfg.epsilon, fine_grid, exec)?;
        // same quadrature at twice the resolution; a large ratio means I is not converged
        let r = tau_curvature(&state, &rho0, cfg.epsilon, 2 * fine_grid, exec)?;
        report = report.with_curvature(&c);
        curvature = Some(c);
        refined = Some(r);
    }
    let i_ratio = match (curvature, refined) {
        (Some(c), Some(r)) if c.i_value > 0.0 => Some(r.i_value / c.i_value),
        _ => None,
    };
    let mut out = Outputs::new(
        cfg,
        "tau",
        serde_json::json!({"fine_grid": fine_grid, "rough_only": rough_only}),
    )?;
    out.json(
        "tau.json",
        &serde_json::json!({
            "report": report,
            "curvature": curvature,
            "curvature_refined": refined,
            "refinement_i_ratio": i_ratio,
        }),
    )?;
    println!("energy spread {:.6}", report.energy_spread);
    println!("tau_rough {:.6}", report.tau_rough);
    if let (Some(c), Some(r)) = (curvature, refined) {
        println!(
            "tau_curvature {:.6e}  (I = {:.6e}, H0 = {:.6e})",
            c.tau, c.i_value, c.hbar0
        );
        println!("at {}^2: tau {:.6e}, I = {:.6e}", 2 * fine_grid, r.tau, r.i_value);
        if let Some(ratio) = i_ratio {
            if (ratio - 1.0).abs() > 0.1 {
                eprintln!("warning: I changed by a factor {ratio:.3} on refinement; the quadrature is not converged");
            }
        }
    }
    out.finish()
}

fn selftest(exec: Execution) -> Result<()> {
    let checks = crate::selftest::run_all(exec);
    let mut failed = 0;
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} of {} self-checks failed",
            checks.len()
        )));
    }
    println!("all {} self-checks passed", checks.len());
    Ok(())
}
