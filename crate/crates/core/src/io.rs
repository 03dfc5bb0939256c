//! Binary coefficient dumps and NDJSON helpers.
//!
//! Binary layout (all little-endian):
//!
//! | bytes | content                |
//! |-------|------------------------|
//! | 4     | magic `FPEC`           |
//! | 4     | `u32` version (1)      |
//! | 8     | `u64` rows             |
//! | 8     | `u64` cols             |
//! | 8·r·c | `f64` values, row-major |

use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{invalid, Result};

pub const MAGIC: &[u8; 4] = b"FPEC";
pub const VERSION: u32 = 1;

pub fn write_matrix<W: Write>(mut w: W, rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    if data.len() != rows * cols {
        return invalid(format!("matrix data has {} values, expected {rows}x{cols}", data.len()));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(rows as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Returns `(rows, cols, data)`.
pub fn read_matrix<R: Read>(mut r: R) -> Result<(usize, usize, Vec<f64>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return invalid("not a coefficient dump (bad magic)");
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return invalid(format!("unsupported dump version {version}"));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let cols = u64::from_le_bytes(b8) as usize;
    let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 28));
    for _ in 0..rows * cols {
        r.read_exact(&mut b8)?;
        data.push(f64::from_le_bytes(b8));
    }
    Ok((rows, cols, data))
}

/// Write one JSON object per line.
pub fn write_ndjson<W: Write, S: Serialize>(mut w: W, rows: impl IntoIterator<Item = S>) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
