//! Trajectory dumps.
//!
//! CSV: header `n,node,value`, one row per time level and node, values in
//! shortest round-trip decimal form.
//!
//! Binary: a 32-byte little-endian header `dim: u64, n_per_axis: u64,
//! N: u64, T: f64`, followed by `(N + 1) * node_count` values as `f64` LE in
//! time-major order. The domain length is not stored.

use std::io::{BufRead, Read, Write};

use crate::discretization::{Field, Grid, TimeAxis, Trajectory};
use crate::error::{Result, WideError};

pub const CSV_HEADER: &str = "n,node,value";
pub const BINARY_HEADER_BYTES: usize = 32;

pub fn write_csv<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for (n, level) in traj.levels.iter().enumerate() {
        for (i, v) in level.iter().enumerate() {
            writeln!(out, "{n},{i},{v}")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a CSV dump written by [`write_csv`] for the given grid and time axis.
/// Rows may appear in any order but every `(n, node)` pair must occur once.
pub fn read_csv<R: BufRead>(input: R, grid: Grid, time: TimeAxis) -> Result<Trajectory> {
    let m = grid.node_count();
    let levels = time.steps() + 1;
    let mut values = vec![f64::NAN; m * levels];
    let mut seen = vec![false; m * levels];
    let mut lines = input.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != CSV_HEADER {
        return Err(WideError::Format(format!("missing header `{CSV_HEADER}`")));
    }
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut next = |what: &str| {
            parts
                .next()
                .ok_or_else(|| WideError::Format(format!("row {}: missing {what}", row + 2)))
        };
        let bad = |what: &str, e: &dyn std::fmt::Display| {
            WideError::Format(format!("row {}: bad {what}: {e}", row + 2))
        };
        let n: usize = next("level")?
            .trim()
            .parse()
            .map_err(|e| bad("level", &e))?;
        let i: usize = next("node")?.trim().parse().map_err(|e| bad("node", &e))?;
        let v: f64 = next("value")?
            .trim()
            .parse()
            .map_err(|e| bad("value", &e))?;
        if n >= levels || i >= m {
            return Err(WideError::Format(format!(
                "row {}: index ({n}, {i}) out of range",
                row + 2
            )));
        }
        let k = n * m + i;
        if seen[k] {
            return Err(WideError::Format(format!("duplicate entry ({n}, {i})")));
        }
        seen[k] = true;
        values[k] = v;
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(WideError::Format(format!(
            "missing entry ({}, {})",
            k / m,
            k % m
        )));
    }
    Trajectory::new(
        grid,
        time,
        values.chunks(m).map(|c| Field(c.to_vec())).collect(),
    )
}

pub fn write_binary<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    out.write_all(&(traj.grid.dim() as u64).to_le_bytes())?;
    out.write_all(&(traj.grid.n_per_axis() as u64).to_le_bytes())?;
    out.write_all(&(traj.steps() as u64).to_le_bytes())?;
    out.write_all(&traj.time.t_final().to_le_bytes())?;
    for level in &traj.levels {
        for v in level.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a binary dump; `length` is the side of the spatial domain.
pub fn read_binary<R: Read>(mut input: R, length: f64) -> Result<Trajectory> {
    let mut header = [0u8; BINARY_HEADER_BYTES];
    input
        .read_exact(&mut header)
        .map_err(|e| WideError::Format(format!("short header: {e}")))?;
    let word = |k: usize| <[u8; 8]>::try_from(&header[8 * k..8 * k + 8]).expect("8-byte slice");
    let dim = u64::from_le_bytes(word(0)) as usize;
    let n_per_axis = u64::from_le_bytes(word(1)) as usize;
    let steps = u64::from_le_bytes(word(2)) as usize;
    let t_final = f64::from_le_bytes(word(3));
    let grid = Grid::new(dim, n_per_axis, length)?;
    let time = TimeAxis::new(t_final, steps)?;
    let m = grid.node_count();
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    let expected = 8 * m * (steps + 1);
    if body.len() != expected {
        return Err(WideError::Format(format!(
            "payload has {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Trajectory::new(
        grid,
        time,
        values.chunks(m).map(|c| Field(c.to_vec())).collect(),
    )
}
