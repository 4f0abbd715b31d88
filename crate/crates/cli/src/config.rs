//! Run configuration: JSON file merged with command-line flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use pilotwave::coarsegrain::{CoarseGrainSpec, CoarseMode};
use pilotwave::integrator::IntegratorConfig;
use pilotwave::transport::InitialDensity;
use pilotwave::wavefield::{ModeSuperposition, BOX_SIDE};
use serde::{Deserialize, Serialize};

use crate::commands::CliError;
use crate::CommonArgs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rho0Choice {
    Equilibrium,
    #[serde(rename = "eq15", alias = "ground_state")]
    GroundState,
    /// Mode table χ; the density is |χ(·, 0)|².
    Custom(PathBuf),
}

impl Rho0Choice {
    pub fn parse(text: &str) -> Self {
        match text {
            "equilibrium" => Rho0Choice::Equilibrium,
            "eq15" | "ground" | "ground_state" => Rho0Choice::GroundState,
            path => Rho0Choice::Custom(PathBuf::from(path)),
        }
    }

    pub fn build(&self) -> Result<InitialDensity, CliError> {
        Ok(match self {
            Rho0Choice::Equilibrium => InitialDensity::Equilibrium,
            Rho0Choice::GroundState => InitialDensity::GroundState,
            Rho0Choice::Custom(path) => {
                let chi = load_state(path)?;
                InitialDensity::Custom(Arc::new(move |p| chi.density_at(p, 0.0)))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub state_file: Option<PathBuf>,
    pub rho0: Rho0Choice,
    pub grid: (usize, usize),
    pub epsilon: f64,
    pub coarse_mode: CoarseMode,
    pub overlap_shift_fraction: f64,
    pub integrator: IntegratorConfig,
    pub horizon: f64,
    pub interval: f64,
    /// Points per cell side for error bars; `None` skips them.
    pub resample: Option<usize>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub workers: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            state_file: None,
            rho0: Rho0Choice::GroundState,
            grid: (200, 200),
            epsilon: BOX_SIDE / 16.0,
            coarse_mode: CoarseMode::NonOverlapping,
            overlap_shift_fraction: 0.12,
            integrator: IntegratorConfig::default(),
            horizon: 2.0 * BOX_SIDE,
            interval: BOX_SIDE / 4.0,
            resample: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
            workers: None,
        }
    }
}

impl RunConfig {
    pub fn resolve(common: &CommonArgs) -> Result<Self, CliError> {
        let mut cfg = match &common.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if common.desk {
            cfg.integrator.max_steps = IntegratorConfig::desk().max_steps;
        }
        if let Some(v) = &common.state {
            cfg.state_file = Some(v.clone());
        }
        if let Some(v) = &common.rho0 {
            cfg.rho0 = Rho0Choice::parse(v);
        }
        if let Some(v) = common.grid {
            cfg.grid = v;
        }
        if let Some(v) = common.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = common.max_steps {
            cfg.integrator.max_steps = v;
        }
        if let Some(v) = &common.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = common.seed {
            cfg.seed = v;
        }
        if let Some(v) = common.workers {
            cfg.workers = Some(v);
        }
        cfg.integrator.validate().map_err(CliError::from_core_config)?;
        if cfg.grid.0 < 2 || cfg.grid.1 < 2 {
            return Err(CliError::Config(format!("grid {:?} too small", cfg.grid)));
        }
        if cfg.workers == Some(0) {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn state(&self) -> Result<ModeSuperposition, CliError> {
        match &self.state_file {
            Some(path) => load_state(path),
            None => Ok(ModeSuperposition::default_box16()),
        }
    }

    /// Cells for the configured ε, with the sampling density nearest the grid.
    ///
    /// Returns the spec and a warning when the grid had to be adjusted so
    /// that every cell holds the same number of points.
    pub fn coarse_spec(&self) -> Result<(CoarseGrainSpec, Option<String>), CliError> {
        let probe = CoarseGrainSpec::non_overlapping(1, 1);
        let probe = CoarseGrainSpec {
            cell_side: self.epsilon,
            ..probe
        };
        let cells = probe.cells_per_side().map_err(CliError::from_core_config)?;
        if self.grid.0 != self.grid.1 {
            return Err(CliError::Config("coarse-graining needs a square grid".into()));
        }
        let samples = ((self.grid.0 as f64 / cells as f64).round() as usize).max(1);
        let spec = match self.coarse_mode {
            CoarseMode::NonOverlapping => CoarseGrainSpec::non_overlapping(cells, samples),
            CoarseMode::Overlapping => {
                CoarseGrainSpec::overlapping(cells, self.overlap_shift_fraction, samples)
            }
        };
        let warning = (samples * cells != self.grid.0).then(|| {
            format!(
                "grid {} does not tile {cells} cells; using {}x{} ({samples} per cell side)",
                self.grid.0,
                samples * cells,
                samples * cells
            )
        });
        Ok((spec, warning))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn load_state(path: &Path) -> Result<ModeSuperposition, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    ModeSuperposition::from_json(&text).map_err(CliError::from_core_config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_uses_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"epsilon": 0.5, "integrator": {"max_steps": 10}}"#).unwrap();
        assert_eq!(cfg.epsilon, 0.5);
        assert_eq!(cfg.integrator.max_steps, 10);
        assert_eq!(cfg.integrator.delta_start, 1e-6);
        assert_eq!(cfg.grid, (200, 200));
    }

    #[test]
    fn rho0_names() {
        assert_eq!(Rho0Choice::parse("eq15"), Rho0Choice::GroundState);
        assert_eq!(Rho0Choice::parse("equilibrium"), Rho0Choice::Equilibrium);
        assert_eq!(
            Rho0Choice::parse("chi.json"),
            Rho0Choice::Custom(PathBuf::from("chi.json"))
        );
        let json = serde_json::to_string(&Rho0Choice::GroundState).unwrap();
        assert_eq!(json, "\"eq15\"");
    }

    #[test]
    fn untiled_grid_is_rounded() {
        let cfg = RunConfig::default();
        let (spec, warning) = cfg.coarse_spec().unwrap();
        assert_eq!(spec.samples_per_cell_side, 13);
        assert!(warning.is_some());
        let cfg = RunConfig {
            grid: (192, 192),
            ..RunConfig::default()
        };
        let (spec, warning) = cfg.coarse_spec().unwrap();
        assert_eq!(spec.samples_per_cell_side, 12);
        assert!(warning.is_none());
    }
}
