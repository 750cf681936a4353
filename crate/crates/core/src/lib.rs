//! Context engine for question answering over streaming video.
//!
//! The pipeline runs on precomputed frame embeddings:
//!
//! 1. [`cluster`] groups the cumulative frame stream into events with a
//!    time-weighted K-means.
//! 2. [`compress`] scores each event against the current question and keeps
//!    relevant events at full resolution while pooling the rest to one token
//!    per frame.
//! 3. [`retrieval`] selects relevant prior QA pairs and decides whether the
//!    question can be answered from dialogue alone.
//! 4. [`assembly`] interleaves visual and dialogue context on one timeline and
//!    hands it to a generator.
//!
//! [`dataset`] builds relevant-QA sets and dialogue streams from an annotated
//! QA pool, and [`sim`] replays a stream end to end. Every model call goes
//! through a [`provider`] trait with a deterministic offline fallback.

pub mod assembly;
pub mod cluster;
pub mod compress;
pub mod dataset;
pub mod exec;
pub mod provider;
pub mod retrieval;
pub mod sim;
pub mod store;
pub mod text;

pub use exec::Exec;
