//! Little-endian embedding container.
//!
//! ```text
//! magic "CGSE" | version u32 | N u32 | P u32 | D u32 | N x f64 timestamps | N*P*D x f32
//! ```
//! Features are frame-major, then row-major within a frame.

use std::path::Path;

use thiserror::Error;

use super::frame::{FrameError, FrameFeature};

pub const MAGIC: [u8; 4] = *b"CGSE";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("bad magic {0:?}, expected \"CGSE\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {found}, expected {VERSION}")]
    VersionMismatch { found: u32 },
    #[error("truncated payload: need {expected} bytes, have {got}")]
    Truncated { expected: usize, got: usize },
    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("non-finite value in frame {frame}")]
    NonFinite { frame: usize },
    #[error("timestamp of frame {index} decreases")]
    DecreasingTimestamps { index: usize },
    #[error("frame {index}: {source}")]
    InvalidFrame { index: usize, source: FrameError },
    #[error("frames disagree on shape: {0}x{1} vs {2}x{3}")]
    InconsistentShape(usize, usize, usize, usize),
    #[error("dimension {0} does not fit in u32")]
    TooLarge(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn encode_embeddings(frames: &[FrameFeature]) -> Result<Vec<u8>, EmbeddingError> {
    let (rows, dim) = frames.first().map_or((1, 1), |f| (f.rows(), f.dim()));
    for f in frames {
        if (f.rows(), f.dim()) != (rows, dim) {
            return Err(EmbeddingError::InconsistentShape(rows, dim, f.rows(), f.dim()));
        }
    }
    if let Some(i) = frames.windows(2).position(|w| w[1].timestamp() < w[0].timestamp()) {
        return Err(EmbeddingError::DecreasingTimestamps { index: i + 1 });
    }
    let to_u32 = |v: usize| u32::try_from(v).map_err(|_| EmbeddingError::TooLarge(v));
    let mut out = Vec::with_capacity(HEADER_LEN + frames.len() * (8 + 4 * rows * dim));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(frames.len())?.to_le_bytes());
    out.extend_from_slice(&to_u32(rows)?.to_le_bytes());
    out.extend_from_slice(&to_u32(dim)?.to_le_bytes());
    for f in frames {
        out.extend_from_slice(&f.timestamp().to_le_bytes());
    }
    for f in frames {
        for v in f.flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<Vec<FrameFeature>, EmbeddingError> {
    if bytes.len() < 4 {
        return Err(EmbeddingError::Truncated { expected: HEADER_LEN, got: bytes.len() });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(EmbeddingError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(EmbeddingError::Truncated { expected: HEADER_LEN, got: bytes.len() });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(EmbeddingError::VersionMismatch { found: version });
    }
    let n = u32_at(bytes, 8) as usize;
    let rows = u32_at(bytes, 12) as usize;
    let dim = u32_at(bytes, 16) as usize;
    let per_frame = rows.checked_mul(dim).ok_or(EmbeddingError::TooLarge(rows))?;
    let expected =
        n.checked_mul(8 + 4 * per_frame).and_then(|p| p.checked_add(HEADER_LEN)).ok_or(EmbeddingError::TooLarge(n))?;
    if bytes.len() < expected {
        return Err(EmbeddingError::Truncated { expected, got: bytes.len() });
    }
    if bytes.len() > expected {
        return Err(EmbeddingError::TrailingBytes(bytes.len() - expected));
    }

    let ts_start = HEADER_LEN;
    let feat_start = ts_start + 8 * n;
    let mut frames = Vec::with_capacity(n);
    let mut prev = f64::NEG_INFINITY;
    for i in 0..n {
        let at = ts_start + 8 * i;
        let t = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let base = feat_start + 4 * per_frame * i;
        let patches: Vec<f32> = bytes[base..base + 4 * per_frame]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !t.is_finite() || patches.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { frame: i });
        }
        if t < prev {
            return Err(EmbeddingError::DecreasingTimestamps { index: i });
        }
        prev = t;
        let frame = FrameFeature::new(rows, dim, patches, t)
            .map_err(|source| EmbeddingError::InvalidFrame { index: i, source })?;
        frames.push(frame);
    }
    Ok(frames)
}

pub fn save_embeddings(path: impl AsRef<Path>, frames: &[FrameFeature]) -> Result<(), EmbeddingError> {
    std::fs::write(path, encode_embeddings(frames)?)?;
    Ok(())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<FrameFeature>, EmbeddingError> {
    decode_embeddings(&std::fs::read(path)?)
}
