use serde_json::json;
use streamqa::cluster::ClusterError;
use streamqa::compress::CompressError;
use streamqa::dataset::DatasetError;
use streamqa::retrieval::RetrievalError;
use streamqa::sim::SimError;
use streamqa::store::ManifestError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Sim(e) => e.kind(),
            CliError::Manifest(_) => "manifest",
            CliError::Cluster(_) => "cluster",
            CliError::Compress(_) => "compress",
            CliError::Retrieval(_) => "retrieval",
            CliError::Dataset(_) => "dataset",
            CliError::Io { .. } => "io",
            CliError::Json { .. } => "json",
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}
