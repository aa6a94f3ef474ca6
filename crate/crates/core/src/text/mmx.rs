//! `MMX1` binary matrix files.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "MMX1"
//! 4       4         rows N      (u32 LE)
//! 8       4         cols W      (u32 LE)
//! 12      4         reserved, 0 (u32 LE)
//! 16      4·N·W     f32 LE, row-major
//! 16+4NW  8         FNV-1a 64 of the payload bytes (u64 LE)
//! ```

use std::fs;
use std::hash::Hasher;
use std::io;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use ndarray::Array2;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"MMX1";
pub const HEADER_LEN: usize = 16;
pub const CHECKSUM_LEN: usize = 8;

/// Rows of fixed-width embedding (or feature) vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    rows: Array2<f32>,
}

#[derive(Debug, Error)]
pub enum MmxError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("bad magic {found:?} (expected \"MMX1\")")]
    BadMagic { found: [u8; 4] },
    #[error("truncated file: {len} bytes, need at least {needed} (header declares {rows}x{cols}); data ends at byte offset {len}")]
    Truncated { len: usize, needed: usize, rows: usize, cols: usize },
    #[error("payload length mismatch: header declares {rows}x{cols} ({expected} bytes total) but file has {actual} bytes")]
    LengthMismatch { rows: usize, cols: usize, expected: usize, actual: usize },
    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("non-finite entry at row {row}, col {col}")]
    NonFinite { row: usize, col: usize },
    #[error("reserved header field is {0}, expected 0")]
    Reserved(u32),
    #[error("empty matrix ({rows}x{cols})")]
    Empty { rows: usize, cols: usize },
}

impl EmbeddingMatrix {
    pub fn new(rows: Array2<f32>) -> Result<Self, MmxError> {
        let (n, w) = rows.dim();
        if n == 0 || w == 0 {
            return Err(MmxError::Empty { rows: n, cols: w });
        }
        if let Some(((row, col), _)) = rows.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(MmxError::NonFinite { row, col });
        }
        Ok(EmbeddingMatrix { rows: rows.as_standard_layout().into_owned() })
    }

    pub fn from_f64(rows: &Array2<f64>) -> Result<Self, MmxError> {
        Self::new(rows.mapv(|v| v as f32))
    }

    pub fn rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn width(&self) -> usize {
        self.rows.ncols()
    }

    pub fn view(&self) -> &Array2<f32> {
        &self.rows
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.rows.mapv(f64::from)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, w) = self.rows.dim();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * n * w + CHECKSUM_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(w as u32).to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for v in self.rows.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let sum = fnv1a(&out[HEADER_LEN..]);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MmxError> {
        if bytes.len() < HEADER_LEN {
            return Err(MmxError::Truncated { len: bytes.len(), needed: HEADER_LEN, rows: 0, cols: 0 });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(MmxError::BadMagic { found: magic });
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let (n, w, reserved) = (word(4) as usize, word(8) as usize, word(12));
        if reserved != 0 {
            return Err(MmxError::Reserved(reserved));
        }
        let expected = HEADER_LEN + 4 * n * w + CHECKSUM_LEN;
        if bytes.len() < expected {
            return Err(MmxError::Truncated { len: bytes.len(), needed: expected, rows: n, cols: w });
        }
        if bytes.len() != expected {
            return Err(MmxError::LengthMismatch { rows: n, cols: w, expected, actual: bytes.len() });
        }
        let payload = &bytes[HEADER_LEN..expected - CHECKSUM_LEN];
        let stored = u64::from_le_bytes(bytes[expected - CHECKSUM_LEN..].try_into().expect("8 bytes"));
        let computed = fnv1a(payload);
        if stored != computed {
            return Err(MmxError::Checksum { stored, computed });
        }
        let values: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let rows = Array2::from_shape_vec((n, w), values).expect("length checked above");
        Self::new(rows)
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: &Path) -> Result<(), MmxError> {
    fs::write(path, matrix.to_bytes()).map_err(|source| MmxError::Io { path: path.to_path_buf(), source })
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix, MmxError> {
    let bytes = fs::read(path).map_err(|source| MmxError::Io { path: path.to_path_buf(), source })?;
    EmbeddingMatrix::from_bytes(&bytes)
}
