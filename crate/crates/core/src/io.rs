//! CSV, matrix and JSON outputs consumed by the plotting scripts.
//!
//! Floats are written with 17 significant digits so files are reproducible
//! byte for byte and round-trip exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coarsegrain::CellGrid;
use crate::error::{Error, Result};
use crate::integrator::{DivergenceSeries, IntegratorConfig, TrajectorySample, TABLEAU_ID};
use crate::lattice::SampledField;
use crate::relaxation::HSeries;
use crate::transport::DensityLattice;
use crate::wavefield::ModeSuperposition;

/// Float formatting used in every output file.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// `x,y,f,rho,flagged`, one row per lattice point in row-major order.
pub fn write_density_csv(path: &Path, density: &DensityLattice) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["x", "y", "f", "rho", "flagged"])
        .map_err(csv_err)?;
    for i in 0..density.lattice.len() {
        let p = density.lattice.position_of(i);
        w.write_record([
            fmt_f64(p.x),
            fmt_f64(p.y),
            fmt_f64(density.f_values[i]),
            fmt_f64(density.rho_values[i]),
            u8::from(density.flagged[i]).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySidecar {
    pub time: f64,
    pub nx: usize,
    pub ny: usize,
    pub state_hash: String,
    pub rho0: String,
    pub tableau: String,
    pub integrator: IntegratorConfig,
    pub flagged_fraction: f64,
    pub non_validated_fraction: f64,
}

impl DensitySidecar {
    pub fn new(
        density: &DensityLattice,
        state: &ModeSuperposition,
        rho0: &str,
        integrator: &IntegratorConfig,
        non_validated_fraction: f64,
    ) -> Self {
        Self {
            time: density.time,
            nx: density.lattice.nx,
            ny: density.lattice.ny,
            state_hash: state.state_hash(),
            rho0: rho0.to_string(),
            tableau: TABLEAU_ID.to_string(),
            integrator: *integrator,
            flagged_fraction: density.flagged_fraction(),
            non_validated_fraction,
        }
    }
}

/// `cx,cy,value`.
pub fn write_cellgrid_csv(path: &Path, grid: &CellGrid) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["cx", "cy", "value"]).map_err(csv_err)?;
    let (nx, ny) = grid.dims();
    for row in 0..ny {
        for col in 0..nx {
            let c = grid.center(row, col);
            w.write_record([fmt_f64(c.x), fmt_f64(c.y), fmt_f64(grid.get(row, col))])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Row-major matrix: one line per row (increasing y), space-separated columns.
pub fn write_matrix(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    if values.len() != rows * cols {
        return Err(Error::InvalidConfig(format!(
            "{} values for a {rows}x{cols} matrix",
            values.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    for row in values.chunks(cols) {
        let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_field_matrix(path: &Path, field: &SampledField) -> Result<()> {
    write_matrix(path, field.lattice.ny, field.lattice.nx, &field.values)
}

pub fn write_cell_matrix(path: &Path, grid: &CellGrid) -> Result<()> {
    let (nx, ny) = grid.dims();
    write_matrix(path, ny, nx, &grid.values)
}

/// `t,hbar,err`.
pub fn write_hseries_csv(path: &Path, series: &HSeries) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "hbar", "err"]).map_err(csv_err)?;
    for ((t, h), e) in series
        .times
        .iter()
        .zip(&series.hbar_values)
        .zip(&series.error_bars)
    {
        w.write_record([fmt_f64(*t), fmt_f64(*h), fmt_f64(*e)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `t,x,y,h,delta_used`.
pub fn write_trajectory_csv(path: &Path, samples: &[TrajectorySample], delta_used: f64) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "x", "y", "h", "delta_used"])
        .map_err(csv_err)?;
    for s in samples {
        w.write_record([
            fmt_f64(s.t),
            fmt_f64(s.pos.x),
            fmt_f64(s.pos.y),
            fmt_f64(s.h),
            fmt_f64(delta_used),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `t,separation`.
pub fn write_divergence_csv(path: &Path, series: &DivergenceSeries) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "separation"]).map_err(csv_err)?;
    for (t, s) in series.times.iter().zip(&series.separations) {
        w.write_record([fmt_f64(*t), fmt_f64(*s)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

/// Run manifest listing every output with its content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub tableau: String,
    pub crate_version: String,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        let config_hash = sha256_hex(config.to_string().as_bytes());
        Self {
            command: command.to_string(),
            config_hash,
            config,
            tableau: TABLEAU_ID.to_string(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            files: Vec::new(),
        }
    }

    /// Hashes `path` and records it relative to `root`.
    pub fn add(&mut self, root: &Path, path: &Path) -> Result<()> {
        let rel: PathBuf = path.strip_prefix(root).unwrap_or(path).to_path_buf();
        self.files.push(ManifestEntry {
            path: rel.to_string_lossy().into_owned(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarsegrain::CoarseGrainSpec;
    use crate::relaxation::{HSeries, RunMetadata};
    use crate::transport::InitialDensity;

    #[test]
    fn floats_round_trip_exactly() {
        for v in [0.1, std::f64::consts::PI, 1e-300, 123456.789, -2.5e-7] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn hseries_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        let state = ModeSuperposition::default_box16();
        let series = HSeries {
            times: vec![0.0, 1.0],
            hbar_values: vec![0.5, 0.25],
            error_bars: vec![0.01, 0.0],
            samples: vec![],
            run_metadata: RunMetadata::new(
                &state,
                &InitialDensity::GroundState,
                &IntegratorConfig::default(),
                &CoarseGrainSpec::non_overlapping(16, 2),
                None,
            ),
        };
        write_hseries_csv(&path, &series).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,hbar,err");
        assert_eq!(lines.len(), 3);
        assert!(!text.contains('\r'));
        assert_eq!(lines[2].split(',').nth(1).unwrap().parse::<f64>().unwrap(), 0.25);
    }

    #[test]
    fn matrix_shape_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        assert!(write_matrix(&path, 2, 2, &[1.0, 2.0, 3.0]).is_err());
        write_matrix(&path, 2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap().split(' ').count(), 3);
    }

    #[test]
    fn manifest_hashes_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        std::fs::write(&path, b"abc").unwrap();
        let mut m = Manifest::new("test", serde_json::json!({"k": 1}));
        m.add(dir.path(), &path).unwrap();
        assert_eq!(m.files[0].path, "a.txt");
        assert_eq!(
            m.files[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
