//! Frame embeddings, vector primitives and session manifests.

mod embeddings;
mod frame;
mod manifest;
mod vector;

pub use embeddings::{
    decode_embeddings, encode_embeddings, load_embeddings, save_embeddings, EmbeddingError, HEADER_LEN, MAGIC, VERSION,
};
pub use frame::{FrameError, FrameFeature};
pub use manifest::{ManifestError, QaRecord, QaType, SegmentMeta, SessionManifest, Tier, SCHEMA_VERSION};
pub use vector::{cosine, mean_pool, minmax_normalize, VectorError};
