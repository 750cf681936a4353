//! Question-aware stream compression.
//!
//! Each event gets an embedding `h`; its relevance to the current question
//! embedding `q` is `cosine(h, q)`. Events scoring at least `theta` keep their
//! original frames, the rest are reduced to one mean-pooled token per frame.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::Event;
use crate::exec::Exec;
use crate::provider::{Embedder, ProviderError, Summarizer};
use crate::store::{cosine, mean_pool, FrameFeature, VectorError};
use crate::text;

pub const DEFAULT_THETA: f64 = 0.45;
pub const FALLBACK_PROVENANCE: &str = "fallback-meanpool";
pub const SUMMARY_PROMPT: &str =
    "Summarize the key objects, actions and changes shown in the preceding frames of this event.";

#[derive(Debug, Error, PartialEq)]
pub enum CompressError {
    #[error("event {0} has no frames")]
    EmptyEvent(usize),
    #[error("event {event} references frame {frame} which does not exist")]
    MissingFrame { event: usize, frame: usize },
    #[error("question text is empty")]
    EmptyQuestion,
    #[error("theta {0} outside [-1, 1]")]
    BadTheta(f64),
    #[error("{events} events but {embeddings} embeddings")]
    CountMismatch { events: usize, embeddings: usize },
    #[error("event {event} embedding has dimension {got}, question has {expected}")]
    DimensionMismatch { event: usize, expected: usize, got: usize },
    #[error("non-finite value in embedding")]
    NonFinite,
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub theta: f64,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self { theta: DEFAULT_THETA }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<(), CompressError> {
        if !(-1.0..=1.0).contains(&self.theta) {
            return Err(CompressError::BadTheta(self.theta));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEmbedding {
    pub vector: Vec<f32>,
    /// Provider id, or [`FALLBACK_PROVENANCE`].
    pub provenance: String,
}

fn event_frames<'a>(event: &Event, frames: &'a [FrameFeature]) -> Result<Vec<&'a FrameFeature>, CompressError> {
    if event.members.is_empty() {
        return Err(CompressError::EmptyEvent(event.event_id));
    }
    event
        .members
        .iter()
        .map(|&i| frames.get(i).ok_or(CompressError::MissingFrame { event: event.event_id, frame: i }))
        .collect()
}

/// Summarizes an event into one vector.
///
/// With a summarizer, all member-frame rows are concatenated into one token
/// sequence, sent with [`SUMMARY_PROMPT`], and the returned hidden states are
/// mean-pooled. Without one, the rows themselves are mean-pooled. A provider
/// failure falls back to the local path only when `fallback_on_error` is set.
pub fn embed_event(
    event: &Event,
    frames: &[FrameFeature],
    summarizer: Option<&dyn Summarizer>,
    fallback_on_error: bool,
) -> Result<EventEmbedding, CompressError> {
    let members = event_frames(event, frames)?;
    let rows: Vec<&[f32]> = members.iter().flat_map(|f| f.row_iter()).collect();

    if let Some(s) = summarizer {
        let provider_path = s
            .hidden_states(SUMMARY_PROMPT, &rows)
            .map_err(CompressError::from)
            .and_then(|hidden| Ok(mean_pool(&hidden)?));
        match provider_path {
            Ok(vector) if vector.iter().all(|v| v.is_finite()) => {
                return Ok(EventEmbedding { vector, provenance: s.id().to_string() })
            }
            Ok(_) if !fallback_on_error => return Err(CompressError::NonFinite),
            Err(e) if !fallback_on_error => return Err(e),
            Ok(_) => log::warn!("summarizer {} returned non-finite states; using fallback", s.id()),
            Err(e) => log::warn!("summarizer {} failed ({e}); using fallback", s.id()),
        }
    }
    Ok(EventEmbedding { vector: mean_pool(&rows)?, provenance: FALLBACK_PROVENANCE.to_string() })
}

/// Offline question embedder: signed feature hashing of normalized terms.
///
/// Each term lands in one of `dim` buckets with a hash-derived sign, weighted
/// by its count. Texts with disjoint vocabularies only overlap on bucket
/// collisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim: dim.max(1) }
    }

    pub fn project(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f32; self.dim];
        for term in text::terms(text) {
            let h = text::fnv1a64(term.as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            v[bucket] += sign;
        }
        v
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> &str {
        "fallback-term-hash"
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, ProviderError> {
        Ok(self.project(text))
    }
}

pub fn embed_question(question: &str, embedder: &dyn Embedder) -> Result<Vec<f32>, CompressError> {
    if text::terms(question).is_empty() {
        return Err(CompressError::EmptyQuestion);
    }
    let v = embedder.embed(question)?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(CompressError::NonFinite);
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledToken {
    pub vector: Vec<f32>,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum VisualContent {
    Preserved { frames: Vec<FrameFeature> },
    Pooled { tokens: Vec<PooledToken> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualUnit {
    pub event_id: usize,
    /// Earliest member timestamp.
    pub start_s: f64,
    pub time_centroid: f64,
    /// Patch rows P of the source frames.
    pub patch_rows: usize,
    /// Cosine relevance to the question; -1 for degenerate embeddings.
    pub relevance: f64,
    pub content: VisualContent,
}

impl VisualUnit {
    pub fn is_preserved(&self) -> bool {
        matches!(self.content, VisualContent::Preserved { .. })
    }

    pub fn frame_count(&self) -> usize {
        match &self.content {
            VisualContent::Preserved { frames } => frames.len(),
            VisualContent::Pooled { tokens } => tokens.len(),
        }
    }

    /// Visual tokens this unit contributes: P per preserved frame, 1 per pooled frame.
    pub fn token_count(&self) -> usize {
        match &self.content {
            VisualContent::Preserved { frames } => frames.iter().map(FrameFeature::rows).sum(),
            VisualContent::Pooled { tokens } => tokens.len(),
        }
    }

    pub fn timestamps(&self) -> Vec<f64> {
        match &self.content {
            VisualContent::Preserved { frames } => frames.iter().map(FrameFeature::timestamp).collect(),
            VisualContent::Pooled { tokens } => tokens.iter().map(|t| t.timestamp).collect(),
        }
    }
}

/// Relevance score, or `None` when either vector has zero norm.
fn relevance(h: &[f32], q: &[f32], event: usize) -> Result<Option<f64>, CompressError> {
    if h.len() != q.len() {
        return Err(CompressError::DimensionMismatch { event, expected: q.len(), got: h.len() });
    }
    match cosine(h, q) {
        Ok(s) => Ok(Some(s)),
        Err(VectorError::ZeroNorm) => {
            log::warn!("event {event}: zero-norm embedding or question, relevance forced to -1");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

pub fn compress_stream(
    events: &[Event],
    embeddings: &[EventEmbedding],
    frames: &[FrameFeature],
    question: &[f32],
    config: &CompressionConfig,
) -> Result<Vec<VisualUnit>, CompressError> {
    compress_stream_with(events, embeddings, frames, question, config, Exec::default())
}

pub fn compress_stream_with(
    events: &[Event],
    embeddings: &[EventEmbedding],
    frames: &[FrameFeature],
    question: &[f32],
    config: &CompressionConfig,
    exec: Exec,
) -> Result<Vec<VisualUnit>, CompressError> {
    config.validate()?;
    if events.len() != embeddings.len() {
        return Err(CompressError::CountMismatch { events: events.len(), embeddings: embeddings.len() });
    }
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| {
        events[a].time_centroid.total_cmp(&events[b].time_centroid).then(events[a].event_id.cmp(&events[b].event_id))
    });

    let units = exec.map(&order, |&i| -> Result<VisualUnit, CompressError> {
        let event = &events[i];
        let members = event_frames(event, frames)?;
        let members_rows = members[0].rows();
        let score = relevance(&embeddings[i].vector, question, event.event_id)?;
        let content = if score.is_some_and(|s| s >= config.theta) {
            VisualContent::Preserved { frames: members.into_iter().cloned().collect() }
        } else {
            let tokens = members
                .iter()
                .map(|f| {
                    Ok(PooledToken { vector: mean_pool(&f.row_iter().collect::<Vec<_>>())?, timestamp: f.timestamp() })
                })
                .collect::<Result<Vec<_>, CompressError>>()?;
            VisualContent::Pooled { tokens }
        };
        Ok(VisualUnit {
            event_id: event.event_id,
            start_s: event.start_s,
            time_centroid: event.time_centroid,
            patch_rows: members_rows,
            relevance: score.unwrap_or(-1.0),
            content,
        })
    });
    units.into_iter().collect()
}

/// Visual tokens after compression.
pub fn token_count(units: &[VisualUnit]) -> usize {
    units.iter().map(VisualUnit::token_count).sum()
}

/// Visual tokens had every unit been preserved.
pub fn uncompressed_token_count(units: &[VisualUnit]) -> usize {
    units.iter().map(|u| u.frame_count() * u.patch_rows).sum()
}

/// Compressed over uncompressed token count; 1 for an empty stream.
pub fn compression_ratio(units: &[VisualUnit]) -> f64 {
    let full = uncompressed_token_count(units);
    if full == 0 {
        1.0
    } else {
        token_count(units) as f64 / full as f64
    }
}
