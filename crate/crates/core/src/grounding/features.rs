//! Binary feature-matrix files.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                                   |
//! |-------:|-----:|-----------------------------------------|
//! | 0      | 4    | magic `MGFT`                            |
//! | 4      | 1    | version, `1`                            |
//! | 5      | 1    | dtype: `1` = f32, `2` = f64             |
//! | 6      | 2    | reserved, zero                          |
//! | 8      | 8    | rows (u64)                              |
//! | 16     | 8    | cols (u64)                              |
//! | 24     | …    | rows × cols values, row-major, LE       |

use std::path::Path;

use crate::error::GroundingError;

use super::matrix::Matrix;

pub const MAGIC: &[u8; 4] = b"MGFT";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureDtype {
    F32 = 1,
    F64 = 2,
}

impl FeatureDtype {
    fn size(self) -> usize {
        match self {
            FeatureDtype::F32 => 4,
            FeatureDtype::F64 => 8,
        }
    }
}

pub fn encode_matrix(m: &Matrix, dtype: FeatureDtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + m.data().len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, dtype as u8, 0, 0]);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &v in m.data() {
        match dtype {
            FeatureDtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            FeatureDtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix, GroundingError> {
    let bad = |m: String| GroundingError::FeatureFormat(m);
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(bad(format!("unsupported version {}", bytes[4])));
    }
    let dtype = match bytes[5] {
        1 => FeatureDtype::F32,
        2 => FeatureDtype::F64,
        d => return Err(bad(format!("unknown dtype {d}"))),
    };
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (rows, cols) = (u64_at(8), u64_at(16));
    let n = rows
        .checked_mul(cols)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| bad("shape overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if n.checked_mul(dtype.size()) != Some(payload.len()) {
        return Err(bad(format!(
            "{rows}x{cols} payload needs {} bytes, found {}",
            n.saturating_mul(dtype.size()),
            payload.len()
        )));
    }
    let data = match dtype {
        FeatureDtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        FeatureDtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Matrix::new(rows as usize, cols as usize, data)
}

pub fn read_matrix(path: &Path) -> crate::Result<Matrix> {
    let bytes = std::fs::read(path).map_err(|e| crate::Error::io(path, e))?;
    Ok(decode_matrix(&bytes)?)
}

pub fn write_matrix(path: &Path, m: &Matrix, dtype: FeatureDtype) -> crate::Result<()> {
    std::fs::write(path, encode_matrix(m, dtype)).map_err(|e| crate::Error::io(path, e))
}
