//! Portable latent export: a binary f64 matrix plus a CSV label table.
//!
//! Matrix layout: 8-byte magic `CDLATENT`, u32 version, u64 rows, u64 cols,
//! then rows × cols little-endian f64 values in row-major order.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const LATENT_MAGIC: &[u8; 8] = b"CDLATENT";
pub const LATENT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 8;

pub fn encode_latents(latents: &Array2<f64>) -> Vec<u8> {
    let (rows, cols) = latents.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + rows * cols * 8);
    out.extend_from_slice(LATENT_MAGIC);
    out.extend_from_slice(&LATENT_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for v in latents.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_latents(bytes: &[u8]) -> Result<Array2<f64>> {
    let bad = |why: &str| Error::Schema(format!("latent file: {why}"));
    if bytes.len() < HEADER_LEN || &bytes[..8] != LATENT_MAGIC {
        return Err(bad("missing header"));
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != LATENT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let rows = u64_at(12) as usize;
    let cols = u64_at(20) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != rows * cols * 8 {
        return Err(bad(&format!("expected {} values, found {} bytes", rows * cols, body.len())));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), values).expect("size checked"))
}

pub fn write_latents(path: &Path, latents: &Array2<f64>) -> Result<()> {
    crate::datagen::write_atomic(path, &encode_latents(latents))
}

pub fn read_latents(path: &Path) -> Result<Array2<f64>> {
    decode_latents(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn encode_labels(names: &[String], labels: &Array2<usize>) -> String {
    let mut out = names.join(",");
    out.push('\n');
    for row in labels.rows() {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn decode_labels(text: &str) -> Result<(Vec<String>, Array2<usize>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Schema("label table is empty".into()))?;
    let names: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(Error::Schema(format!("label row {} has {} cells", n + 1, cells.len())));
        }
        for c in cells {
            values.push(
                c.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Schema(format!("label row {} has non-integer `{c}`", n + 1)))?,
            );
        }
        rows += 1;
    }
    let labels = Array2::from_shape_vec((rows, names.len()), values).expect("size checked");
    Ok((names, labels))
}

pub fn write_labels(path: &Path, names: &[String], labels: &Array2<usize>) -> Result<()> {
    crate::datagen::write_atomic(path, encode_labels(names, labels).as_bytes())
}

pub fn read_labels(path: &Path) -> Result<(Vec<String>, Array2<usize>)> {
    decode_labels(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
