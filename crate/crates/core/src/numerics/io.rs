use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, SmpError};
use crate::numerics::matrix::DenseMatrix;

/// Matrix binary format, shared repo-wide:
/// magic "SMPMAT01", u64 rows, u64 cols (little-endian), then
/// rows*cols little-endian IEEE-754 f64 row-major.
pub const MATRIX_MAGIC: &[u8; 8] = b"SMPMAT01";

pub fn write_matrix(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| SmpError::Corrupt(format!("{}: truncated header", path.display())))?;
    if &magic != MATRIX_MAGIC {
        return Err(SmpError::Corrupt(format!("{}: bad magic", path.display())));
    }
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| SmpError::Corrupt(format!("{}: truncated dims", path.display())))?;
    let rows = u64::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)
        .map_err(|_| SmpError::Corrupt(format!("{}: truncated dims", path.display())))?;
    let cols = u64::from_le_bytes(buf) as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| SmpError::Corrupt(format!("{}: dimension overflow", path.display())))?;
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf)
            .map_err(|_| SmpError::Corrupt(format!("{}: truncated data", path.display())))?;
        data.push(f64::from_le_bytes(buf));
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail)? != 0 {
        return Err(SmpError::Corrupt(format!("{}: trailing bytes", path.display())));
    }
    DenseMatrix::from_vec(rows, cols, data)
}
