use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// First 8 bytes of a binary weight file. The header continues with the row
/// and column counts as little-endian `u32`, followed by row-major
/// little-endian `f64` entries.
pub const WEIGHTS_MAGIC: [u8; 8] = *b"CLPW\x00\x01\x00\x00";

pub fn write_weights_bin(path: &Path, w: &DMatrix<f64>) -> Result<()> {
    let to_u32 = |n: usize| {
        u32::try_from(n).map_err(|_| Error::arg("W", "dimension does not fit in u32"))
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = Vec::with_capacity(16);
    header.extend_from_slice(&WEIGHTS_MAGIC);
    header.extend_from_slice(&to_u32(w.nrows())?.to_le_bytes());
    header.extend_from_slice(&to_u32(w.ncols())?.to_le_bytes());
    out.write_all(&header).map_err(|e| Error::io(path, e))?;
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            out.write_all(&w[(i, j)].to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_weights_bin(path: &Path) -> Result<DMatrix<f64>> {
    let bad = |reason: &str| Error::Format {
        path: path.into(),
        reason: reason.into(),
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || bytes[..8] != WEIGHTS_MAGIC {
        return Err(bad("missing weight-file header"));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != rows * cols * 8 {
        return Err(bad("payload length does not match the header"));
    }
    let vals: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

/// One matrix row per CSV record, no header.
pub fn write_weights_csv(path: &Path, w: &DMatrix<f64>) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..w.nrows() {
        out.write_record(w.row(i).iter().map(|v| format!("{v:?}")))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_weights_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| Error::Format {
                    path: path.into(),
                    reason: format!("bad number {s:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.concat();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}
