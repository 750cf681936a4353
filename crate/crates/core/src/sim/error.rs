use thiserror::Error;

use crate::assembly::AssemblyError;
use crate::cluster::ClusterError;
use crate::compress::CompressError;
use crate::dataset::DatasetError;
use crate::retrieval::RetrievalError;
use crate::store::{EmbeddingError, ManifestError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("segment {segment}: {source}")]
    Embeddings { segment: u32, source: EmbeddingError },
    #[error("segment {segment}: frames have shape {got:?}, session uses {expected:?}")]
    FrameShape { segment: u32, expected: (usize, usize), got: (usize, usize) },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("stream {0} not found in manifest")]
    UnknownStream(u32),
    #[error("no frames available at t={0}")]
    NoFrames(f64),
    #[error("provider {role} not configured")]
    MissingProvider { role: &'static str },
    #[error("no question records to evaluate")]
    NoRecords,
    #[error("report schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SimError {
    /// Stable machine-readable kind.
    pub fn kind(&self) -> &'static str {
        match self {
            SimError::Embeddings { .. } | SimError::FrameShape { .. } => "embeddings",
            SimError::Manifest(_) => "manifest",
            SimError::Cluster(_) => "cluster",
            SimError::Compress(_) => "compress",
            SimError::Retrieval(_) => "retrieval",
            SimError::Assembly(_) => "assembly",
            SimError::Dataset(_) => "dataset",
            SimError::UnknownStream(_) => "unknown_stream",
            SimError::NoFrames(_) => "no_frames",
            SimError::MissingProvider { .. } => "missing_provider",
            SimError::NoRecords => "no_records",
            SimError::Schema(_) => "schema",
            SimError::Json(_) => "json",
            SimError::Io(_) => "io",
        }
    }
}
