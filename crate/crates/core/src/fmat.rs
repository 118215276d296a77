//! `FMAT`: the binary matrix container used for features and checkpoints.
//!
//! Layout: magic `"FMAT"`, then rows and cols as 32-bit little-endian
//! unsigned integers, then row-major 32-bit little-endian IEEE-754 values.
//! Round trips are bit-exact at f32 precision.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"FMAT";

#[derive(Debug, Error)]
pub enum FmatError {
    #[error("bad magic {0:?}, expected \"FMAT\"")]
    BadMagic([u8; 4]),
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("matrix dimension {0} exceeds u32 range")]
    DimTooLarge(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Write a matrix, quantizing values to f32.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<(), FmatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix_to(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn write_matrix_to<W: Write>(w: &mut W, m: &Array2<f64>) -> Result<(), FmatError> {
    let (rows, cols) = m.dim();
    let rows32 = u32::try_from(rows).map_err(|_| FmatError::DimTooLarge(rows))?;
    let cols32 = u32::try_from(cols).map_err(|_| FmatError::DimTooLarge(cols))?;
    w.write_all(&MAGIC)?;
    w.write_all(&rows32.to_le_bytes())?;
    w.write_all(&cols32.to_le_bytes())?;
    for &v in m.iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Read a matrix back; values are f32 widened to f64.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>, FmatError> {
    let mut r = BufReader::new(File::open(path)?);
    read_matrix_from(&mut r)
}

pub fn read_matrix_from<R: Read>(r: &mut R) -> Result<Array2<f64>, FmatError> {
    let mut magic = [0u8; 4];
    read_exactly(r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(FmatError::BadMagic(magic));
    }
    let mut dim = [0u8; 4];
    read_exactly(r, &mut dim, "row count")?;
    let rows = u32::from_le_bytes(dim) as usize;
    read_exactly(r, &mut dim, "column count")?;
    let cols = u32::from_le_bytes(dim) as usize;

    let mut data = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 4];
    for i in 0..rows * cols {
        read_exactly(r, &mut buf, &format!("value {i} of {}", rows * cols))?;
        data.push(f32::from_le_bytes(buf) as f64);
    }
    Ok(Array2::from_shape_vec((rows, cols), data).expect("shape matches data length"))
}

fn read_exactly<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), FmatError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            FmatError::Truncated(what.to_string())
        } else {
            FmatError::Io(e)
        }
    })
}
