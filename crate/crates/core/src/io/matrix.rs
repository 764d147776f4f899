//! Dense matrix files.
//!
//! Binary layout: a 16-byte header of magic `FCRM`, then `version`, `rows`
//! and `cols` as little-endian `u32`, followed by `rows × cols` little-endian
//! `f32` values in row-major order. Comma-delimited text is accepted on read
//! as a fallback, with an optional non-numeric header row.

use std::path::Path;

use ndarray::Array2;

use super::atomic_write;
use crate::error::{FcrError, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"FCRM";
pub const MATRIX_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode_fcrm(m: &Array2<f64>) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.nrows()).map_err(|_| FcrError::Precondition("matrix has too many rows".into()))?;
    let cols = u32::try_from(m.ncols()).map_err(|_| FcrError::Precondition("matrix has too many columns".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_fcrm(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let bad = |message: String| FcrError::Format {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < HEADER_LEN || &bytes[..4] != MATRIX_MAGIC {
        return Err(bad("missing FCRM header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != MATRIX_VERSION {
        return Err(bad(format!("unsupported matrix version {version}")));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("matrix size overflows".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(bad(format!("expected {expected} data bytes for {rows}x{cols}, found {}", body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
}

/// Parses comma-delimited numbers. A first row that does not parse is
/// returned as column names.
pub fn parse_csv_matrix(text: &str, path: &Path) -> Result<(Array2<f64>, Option<Vec<String>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut header = None;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| FcrError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if line == 0 => {
                header = Some(rec.iter().map(str::to_string).collect());
                continue;
            }
            Err(_) => {
                let col = rec.iter().position(|f| f.parse::<f64>().is_err()).unwrap_or(0);
                return Err(FcrError::Ingest {
                    location: format!("{} line {}, column {}", path.display(), line + 1, col),
                    message: format!("not a number: {:?}", rec.get(col).unwrap_or("")),
                });
            }
        };
        match cols {
            None => cols = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(FcrError::Ingest {
                    location: format!("{} line {}", path.display(), line + 1),
                    message: format!("expected {c} fields, found {}", values.len()),
                })
            }
            _ => {}
        }
        data.extend(values);
        rows += 1;
    }
    let cols = cols.or_else(|| header.as_ref().map(Vec::len)).unwrap_or(0);
    Ok((Array2::from_shape_vec((rows, cols), data).expect("rows checked"), header))
}

/// Reads a binary matrix, or a delimited-text one when the magic is absent.
pub fn read_matrix(path: &Path) -> Result<(Array2<f64>, Option<Vec<String>>)> {
    let bytes = std::fs::read(path).map_err(|e| FcrError::io(path, e))?;
    if bytes.starts_with(MATRIX_MAGIC) {
        return Ok((decode_fcrm(&bytes, path)?, None));
    }
    let text = String::from_utf8(bytes).map_err(|_| FcrError::Format {
        path: path.to_path_buf(),
        message: "neither an FCRM matrix nor UTF-8 text".into(),
    })?;
    parse_csv_matrix(&text, path)
}

pub fn write_fcrm(path: &Path, m: &Array2<f64>) -> Result<()> {
    atomic_write(path, &encode_fcrm(m)?)
}

/// Comma-delimited text with an optional header row, full `f64` precision.
pub fn matrix_to_csv(m: &Array2<f64>, header: Option<&[String]>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| FcrError::Format {
        path: Default::default(),
        message: e.to_string(),
    };
    if let Some(h) = header {
        w.write_record(h).map_err(err)?;
    }
    for row in m.rows() {
        w.write_record(row.iter().map(|v| format!("{v}"))).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| FcrError::Format {
        path: Default::default(),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn write_csv_matrix(path: &Path, m: &Array2<f64>, header: Option<&[String]>) -> Result<()> {
    atomic_write(path, matrix_to_csv(m, header)?.as_bytes())
}
