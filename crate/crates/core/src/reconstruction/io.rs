use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::assembly::{AssemblyTimings, FredholmSystem, RowModel};
use crate::controllability::ControlReport;
use crate::error::{Error, Result};
use crate::phase_space::PhaseSpace;
use crate::Real;

/// Writes `rows`, `cols` as little-endian `u64`, then the entries row-major as little-endian `f64`.
pub fn write_matrix<T: Real>(path: &Path, m: &DMatrix<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_all(&m[(i, j)].to_f64_lossy().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let rows = u64::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let cols = u64::from_le_bytes(word) as usize;
    let len = rows.checked_mul(cols).ok_or_else(|| Error::contract("matrix header overflows"))?;
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut word)?;
        values.push(f64::from_le_bytes(word));
    }
    if r.read(&mut word)? != 0 {
        return Err(Error::contract("trailing bytes after matrix payload"));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub n_dirs: usize,
}

impl GridMeta {
    pub fn of<T: Real>(space: &PhaseSpace<T>) -> Self {
        Self {
            nx: space.grid.nx,
            ny: space.grid.ny,
            lx: space.grid.lx.to_f64_lossy(),
            ly: space.grid.ly.to_f64_lossy(),
            n_dirs: space.n_dirs(),
        }
    }
}

/// JSON companion of the binary matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FredholmSidecar {
    pub grid: GridMeta,
    pub model: RowModel,
    pub rhs: Vec<f64>,
    pub condition: f64,
    pub flagged: Vec<usize>,
    pub reports: Vec<ControlReport>,
    pub timings: AssemblyTimings,
}

impl<T: Real> FredholmSystem<T> {
    /// Writes `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, space: &PhaseSpace<T>, dir: &Path, stem: &str) -> Result<()> {
        write_matrix(&dir.join(format!("{stem}.bin")), &self.matrix)?;
        let sidecar = FredholmSidecar {
            grid: GridMeta::of(space),
            model: self.model,
            rhs: self.rhs.iter().map(|v| v.to_f64_lossy()).collect(),
            condition: self.condition,
            flagged: self.flagged.clone(),
            reports: self.reports.clone(),
            timings: self.timings.clone(),
        };
        let file = File::create(dir.join(format!("{stem}.json")))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &sidecar)?;
        Ok(())
    }
}

/// Reads back a saved system as `(matrix, sidecar)`.
pub fn load_system(dir: &Path, stem: &str) -> Result<(DMatrix<f64>, FredholmSidecar)> {
    let m = read_matrix(&dir.join(format!("{stem}.bin")))?;
    let sidecar: FredholmSidecar = serde_json::from_reader(BufReader::new(File::open(dir.join(format!("{stem}.json")))?))?;
    if m.nrows() != sidecar.rhs.len() {
        return Err(Error::contract("matrix and right-hand side sizes differ"));
    }
    Ok((m, sidecar))
}
