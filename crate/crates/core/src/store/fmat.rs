use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::linalg::DenseMatrix;
use crate::subspace::{FeatureMatrix, Provenance};

pub const FMAT_MAGIC: &[u8; 4] = b"FMAT";
pub const FMAT_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;
/// magic + version + dtype + rows + cols + metadata length
const FIXED_HEADER: usize = 4 + 2 + 1 + 8 + 8 + 4;

/// Size of the header of a file whose metadata is `metadata_len` bytes.
pub fn fmat_header_len(metadata_len: usize) -> usize {
    FIXED_HEADER + metadata_len
}

/// Writes `f` as FMAT v1: little-endian header, JSON provenance, then the
/// row-major payload rounded to `f32`.
pub fn write_fmat(f: &FeatureMatrix, path: &Path) -> Result<()> {
    let meta = serde_json::to_vec(&f.source).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let (rows, cols) = f.data.shape();
    let mut out = Vec::with_capacity(fmat_header_len(meta.len()) + rows * cols * 4);
    out.extend_from_slice(FMAT_MAGIC);
    out.extend_from_slice(&FMAT_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    for &v in f.data.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    super::write_atomic(path, &out)
}

pub fn read_fmat(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |kind| Error::Format {
        path: path.to_path_buf(),
        kind,
    };
    if bytes.len() < FIXED_HEADER {
        if let Some(i) = (0..bytes.len().min(4)).find(|&i| bytes[i] != FMAT_MAGIC[i]) {
            return Err(fail(FormatError::BadMagic {
                offset: i as u64,
                found: bytes[..bytes.len().min(4)].to_vec(),
            }));
        }
        return Err(fail(FormatError::TruncatedHeader {
            expected: FIXED_HEADER as u64,
            actual: bytes.len() as u64,
        }));
    }
    if let Some(i) = (0..4).find(|&i| bytes[i] != FMAT_MAGIC[i]) {
        return Err(fail(FormatError::BadMagic {
            offset: i as u64,
            found: bytes[..4].to_vec(),
        }));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FMAT_VERSION {
        return Err(fail(FormatError::UnsupportedVersion(version)));
    }
    let dtype = bytes[6];
    if dtype != DTYPE_F32 {
        return Err(fail(FormatError::UnsupportedDtype(dtype)));
    }
    let rows = u64::from_le_bytes(bytes[7..15].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(bytes[15..23].try_into().expect("8 bytes"));
    let meta_len = u32::from_le_bytes(bytes[23..27].try_into().expect("4 bytes")) as usize;
    let header = fmat_header_len(meta_len);
    if bytes.len() < header {
        return Err(fail(FormatError::TruncatedHeader {
            expected: header as u64,
            actual: bytes.len() as u64,
        }));
    }
    let source: Provenance = serde_json::from_slice(&bytes[FIXED_HEADER..header])
        .map_err(|e| fail(FormatError::Metadata(e.to_string())))?;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| {
            fail(FormatError::PayloadLength {
                expected: u64::MAX,
                actual: (bytes.len() - header) as u64,
            })
        })?;
    let actual = (bytes.len() - header) as u64;
    if actual != expected {
        return Err(fail(FormatError::PayloadLength { expected, actual }));
    }
    let values: Vec<f64> = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let data = DenseMatrix::new(rows as usize, cols as usize, values)?;
    FeatureMatrix::new(data, source)
}
