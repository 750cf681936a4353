use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("frame shape must be at least 1x1, got {rows}x{dim}")]
    EmptyShape { rows: usize, dim: usize },
    #[error("expected {expected} patch values for a {rows}x{dim} frame, got {got}")]
    ShapeMismatch { rows: usize, dim: usize, expected: usize, got: usize },
    #[error("timestamp {0} is negative or not finite")]
    BadTimestamp(f64),
    #[error("non-finite patch value at flat index {0}")]
    NonFinite(usize),
}

/// One sampled frame: a `rows x dim` patch-feature matrix (row-major) and its
/// timestamp in seconds from the start of the video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFeature {
    rows: usize,
    dim: usize,
    patches: Vec<f32>,
    timestamp: f64,
}

impl FrameFeature {
    pub fn new(rows: usize, dim: usize, patches: Vec<f32>, timestamp: f64) -> Result<Self, FrameError> {
        if rows == 0 || dim == 0 {
            return Err(FrameError::EmptyShape { rows, dim });
        }
        if patches.len() != rows * dim {
            return Err(FrameError::ShapeMismatch { rows, dim, expected: rows * dim, got: patches.len() });
        }
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(FrameError::BadTimestamp(timestamp));
        }
        if let Some(i) = patches.iter().position(|v| !v.is_finite()) {
            return Err(FrameError::NonFinite(i));
        }
        Ok(Self { rows, dim, patches, timestamp })
    }

    /// Patch count P.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Feature dimension D.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    /// Flattened `P*D` view, row-major.
    pub fn flat(&self) -> &[f32] {
        &self.patches
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.patches[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f32]> {
        self.patches.chunks_exact(self.dim)
    }
}
