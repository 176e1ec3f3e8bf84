use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const RMAT_MAGIC: &[u8; 4] = b"RMAT";
pub const RMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Row-major `f32` matrix as stored on disk.
///
/// Layout: `"RMAT"`, then little-endian `u32` version, rows, cols, followed
/// by `rows·cols` little-endian `f32` values.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFile {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl MatrixFile {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Invalid(format!("matrix must be non-empty, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::dim("matrix payload", rows * cols, data.len()));
        }
        Ok(MatrixFile { rows, cols, data })
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        Self::new(m.rows(), m.cols(), m.as_slice().iter().map(|&v| v as f32).collect())
    }

    pub fn row_vector(values: &[f64]) -> Result<Self> {
        Self::new(1, values.len(), values.iter().map(|&v| v as f32).collect())
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|&v| v as f64).collect())
            .expect("payload length checked at construction")
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

pub fn encode_matrix(m: &MatrixFile) -> Result<Vec<u8>> {
    if m.rows == 0 || m.cols == 0 || m.data.len() != m.rows * m.cols {
        return Err(Error::dim("matrix payload", m.rows * m.cols, m.data.len()));
    }
    if let Some(pos) = m.data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("matrix entry {pos} is {}", m.data[pos])));
    }
    let rows = u32::try_from(m.rows).map_err(|_| Error::Invalid("too many rows".into()))?;
    let cols = u32::try_from(m.cols).map_err(|_| Error::Invalid("too many columns".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data.len());
    out.extend_from_slice(RMAT_MAGIC);
    out.extend_from_slice(&RMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<(usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(path, "file shorter than RMAT header"));
    }
    if &bytes[..4] != RMAT_MAGIC {
        return Err(Error::format(path, "bad magic (expected RMAT)"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != RMAT_VERSION {
        return Err(Error::format(path, format!("unsupported RMAT version {version}")));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    if rows == 0 || cols == 0 {
        return Err(Error::format(path, format!("empty matrix {rows}x{cols}")));
    }
    Ok((rows, cols))
}

pub fn decode_matrix(path: &Path, bytes: &[u8]) -> Result<MatrixFile> {
    let (rows, cols) = parse_header(path, bytes)?;
    let payload = &bytes[HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(path, "dimension overflow"))?;
    if payload.len() != expected {
        return Err(Error::dim("RMAT payload bytes", expected, payload.len()));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(MatrixFile { rows, cols, data })
}

pub fn write_matrix(path: &Path, m: &MatrixFile) -> Result<()> {
    super::write_bytes(path, &encode_matrix(m)?)
}

pub fn read_matrix(path: &Path) -> Result<MatrixFile> {
    let bytes = super::read_bytes(path)?;
    decode_matrix(path, &bytes)
}

/// Rows and columns without reading the payload.
pub fn read_matrix_header(path: &Path) -> Result<(usize, usize)> {
    use std::io::Read;
    let mut f = std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let mut head = [0u8; HEADER_LEN];
    f.read_exact(&mut head)
        .map_err(|_| Error::format(path, "file shorter than RMAT header"))?;
    parse_header(path, &head)
}
