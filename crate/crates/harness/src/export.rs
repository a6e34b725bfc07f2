//! CSV tables and atomic JSON files.
//!
//! Floats are written in their shortest round-trip form, so importing an
//! exported file reproduces every value bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use rtinv::{PhaseSpace64, Series64, Spatial64};
use serde::Serialize;

use crate::error::{HarnessError, Result};

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv { path: path.to_path_buf(), source }
}

/// `x,y,value` per cell, row-major over the grid.
pub fn write_spatial(path: &Path, space: &PhaseSpace64, field: &Spatial64) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["x", "y", "value"]).map_err(csv_err(path))?;
    for (cell, v) in field.values.iter().enumerate() {
        let c = space.grid.cell_center(cell);
        w.serialize((c[0], c[1], v)).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Reads a `x,y,value` table back into a field (rows in file order).
pub fn read_spatial(path: &Path) -> Result<Spatial64> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut values = Vec::new();
    for row in r.deserialize::<(f64, f64, f64)>() {
        values.push(row.map_err(csv_err(path))?.2);
    }
    Ok(Spatial64 { values })
}

/// `t,edge,dir,value` per time node and outflow pair.
pub fn write_series(path: &Path, space: &PhaseSpace64, series: &Series64) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["t", "edge", "dir", "value"]).map_err(csv_err(path))?;
    for n in 0..series.n_nodes() {
        let t = n as f64 * series.dt;
        for (p, v) in space.layout.pairs.iter().zip(series.node(n)) {
            w.serialize((t, p.edge, p.dir, v)).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Reads a trace table written by [`write_series`] for the same layout.
pub fn read_series(path: &Path, space: &PhaseSpace64) -> Result<Series64> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for row in r.deserialize::<(f64, usize, usize, f64)>() {
        let (t, _, _, v) = row.map_err(csv_err(path))?;
        if times.last() != Some(&t) {
            times.push(t);
        }
        values.push(v);
    }
    let n_pairs = space.layout.len();
    if values.len() != times.len() * n_pairs {
        return Err(HarnessError::scenario(format!("{}: expected {n_pairs} pairs per time node", path.display())));
    }
    let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
    Ok(Series64 { dt, n_pairs, values })
}

/// Writes pretty JSON through a temporary file and a rename, so readers never see half a file.
pub fn write_json_atomic<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(rtinv::Error::from)?;
    let tmp = path.with_extension("json.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    f.write_all(text.as_bytes()).and_then(|_| f.write_all(b"\n")).and_then(|_| f.sync_all()).map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}
