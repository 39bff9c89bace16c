//! File formats and the random-projection feature step.
//!
//! Matrix files are a 16-byte header followed by the payload:
//!
//! | bytes | content                          |
//! |-------|----------------------------------|
//! | 0..4  | magic `SDLM`                     |
//! | 4..6  | format version, u16 LE           |
//! | 6..10 | rows, u32 LE                     |
//! | 10..14| cols, u32 LE                     |
//! | 14..16| element tag, u16 LE (1 = f64)    |
//!
//! and `rows · cols` little-endian f64 values in column-major order, so each
//! sample column is contiguous.
//!
//! Model files (see [`crate::model`]) start with magic `SDLF`, a u16
//! version and a u32 manifest length, then the JSON manifest and two
//! embedded matrix files: the dictionary and the classifier weights.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const MATRIX_MAGIC: &[u8; 4] = b"SDLM";
pub const MODEL_MAGIC: &[u8; 4] = b"SDLF";
pub const FORMAT_VERSION: u16 = 1;
const TAG_F64: u16 = 1;

pub(crate) fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn write_matrix<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    let rows = u32::try_from(m.nrows()).map_err(|_| invalid("matrix has too many rows"))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| invalid("matrix has too many columns"))?;
    let mut header = [0u8; 16];
    header[0..4].copy_from_slice(MATRIX_MAGIC);
    header[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    header[6..10].copy_from_slice(&rows.to_le_bytes());
    header[10..14].copy_from_slice(&cols.to_le_bytes());
    header[14..16].copy_from_slice(&TAG_F64.to_le_bytes());
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(m.len() * 8);
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|e| format_err(format!("truncated matrix header: {e}")))?;
    if &header[0..4] != MATRIX_MAGIC {
        return Err(format_err("bad matrix magic"));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != FORMAT_VERSION {
        return Err(format_err(format!(
            "unsupported matrix format version {version}"
        )));
    }
    let rows = u32::from_le_bytes(header[6..10].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(header[10..14].try_into().expect("4 bytes")) as usize;
    let tag = u16::from_le_bytes([header[14], header[15]]);
    if tag != TAG_F64 {
        return Err(format_err(format!("unsupported element tag {tag}")));
    }
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| format_err("matrix size overflows"))?;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)
        .map_err(|e| format_err(format!("truncated matrix payload: {e}")))?;
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    Ok(DMatrix::from_iterator(rows, cols, values))
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Loads a matrix file, or a CSV file (one sample per line) by extension.
pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    if is_csv(path) {
        return read_csv_samples(File::open(path)?);
    }
    let mut r = BufReader::new(File::open(path)?);
    let m = read_matrix(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(format_err("trailing bytes after matrix payload"));
    }
    Ok(m)
}

/// Saves a matrix file, or CSV with one sample per line for `.csv` paths.
pub fn save_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if is_csv(path) {
        write_csv_samples(&mut w, m)?;
    } else {
        write_matrix(&mut w, m)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads headerless CSV rows as the columns of the result.
pub fn read_csv_samples<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut values = Vec::new();
    let mut dim = None;
    let mut n = 0;
    for record in reader.records() {
        let record = record?;
        if dim.is_some_and(|d| d != record.len()) {
            return Err(format_err(format!(
                "CSV line {} has {} fields",
                n + 1,
                record.len()
            )));
        }
        dim = Some(record.len());
        for field in record.iter() {
            values.push(
                field
                    .parse::<f64>()
                    .map_err(|e| format_err(format!("CSV line {}: {field:?}: {e}", n + 1)))?,
            );
        }
        n += 1;
    }
    Ok(DMatrix::from_vec(dim.unwrap_or(0), n, values))
}

pub fn write_csv_samples<W: Write>(w: W, m: &DMatrix<f64>) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for col in m.column_iter() {
        out.write_record(col.iter().map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// Parses one 1-based label per line into 0-based labels. Blank lines are
/// skipped.
pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| match l.parse::<usize>() {
            Ok(v) if v >= 1 => Ok(v - 1),
            _ => Err(format_err(format!(
                "line {}: expected a positive label, got {l:?}",
                i + 1
            ))),
        })
        .collect()
}

pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    parse_labels(&std::fs::read_to_string(path)?)
}

/// Writes 0-based labels as 1-based integers, one per line.
pub fn save_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in labels {
        writeln!(w, "{}", l + 1)?;
    }
    w.flush()?;
    Ok(())
}

/// Projects columns with a seeded Gaussian matrix scaled by `1/√target_dim`
/// and scales each result column to unit norm (zero columns stay zero).
/// With `identity` the projection is skipped and only normalization runs;
/// `target_dim` must then equal the input dimension.
pub fn random_project(
    x: &DMatrix<f64>,
    target_dim: usize,
    seed: u64,
    identity: bool,
) -> Result<DMatrix<f64>> {
    if target_dim == 0 {
        return Err(invalid("target dimension must be positive"));
    }
    let mut y = if identity {
        if target_dim != x.nrows() {
            return Err(invalid(format!(
                "identity projection needs target dimension {}, got {target_dim}",
                x.nrows()
            )));
        }
        x.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (target_dim as f64).sqrt();
        let g = DMatrix::from_fn(target_dim, x.nrows(), |_, _| {
            rng.sample::<f64, _>(StandardNormal) * scale
        });
        g * x
    };
    for mut col in y.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
    Ok(y)
}
