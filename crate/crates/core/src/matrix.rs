//! Dense matrix persistence.
//!
//! On-disk format: magic `BXMAT1\0`, u64 little-endian row count, u64
//! little-endian column count, then rows x cols IEEE-754 f32 values,
//! little-endian, row-major. Computation is f64 throughout; files hold f32,
//! so save -> load -> save reproduces a file byte for byte.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

pub const MATRIX_MAGIC: &[u8; 7] = b"BXMAT1\0";
const HEADER_LEN: u64 = 7 + 8 + 8;

pub fn save_matrix(path: impl AsRef<Path>, matrix: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(MATRIX_MAGIC)
        .and_then(|_| w.write_all(&(matrix.nrows() as u64).to_le_bytes()))
        .and_then(|_| w.write_all(&(matrix.ncols() as u64).to_le_bytes()))
        .map_err(|e| Error::io(path, e))?;
    for &v in matrix.iter() {
        w.write_all(&(v as f32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |offset: u64, reason: String| Error::MatrixFormat {
        path: path.to_path_buf(),
        offset,
        reason,
    };

    if bytes.len() < HEADER_LEN as usize {
        return Err(fail(
            bytes.len() as u64,
            format!("truncated header: {} bytes, need {HEADER_LEN}", bytes.len()),
        ));
    }
    if &bytes[..7] != MATRIX_MAGIC {
        return Err(fail(0, "bad magic".into()));
    }
    let rows = u64::from_le_bytes(bytes[7..15].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[15..23].try_into().unwrap());
    let count = rows
        .checked_mul(cols)
        .filter(|&n| n <= (usize::MAX as u64) / 4)
        .ok_or_else(|| fail(7, format!("dimension overflow: {rows} x {cols}")))?;
    let expected = HEADER_LEN + count * 4;
    if bytes.len() as u64 != expected {
        return Err(fail(
            bytes.len().min(expected as usize) as u64,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }

    let data: Vec<f64> = bytes[HEADER_LEN as usize..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Array2::from_shape_vec((rows as usize, cols as usize), data)
        .map_err(|e| fail(HEADER_LEN, e.to_string()))
}

/// Selects the given columns of `matrix`, in the given order.
pub fn select_columns(matrix: &Matrix, columns: &[usize]) -> Result<Matrix> {
    let width = matrix.ncols();
    if let Some(&bad) = columns.iter().find(|&&c| c >= width) {
        return Err(Error::ShapeMismatch(format!(
            "column index {bad} out of range for width {width}"
        )));
    }
    Ok(matrix.select(ndarray::Axis(1), columns))
}
