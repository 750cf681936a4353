use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::store::{load_embeddings, FrameFeature, SegmentMeta, SessionManifest};

use super::SimError;

/// Lazily loads per-segment frames and audits every access against the time
/// at which it is made.
///
/// A violation is any returned frame whose timestamp lies after the access
/// time, or any segment served before its end. The simulator must never
/// cause one; the counter exists so tests can prove it.
#[derive(Debug)]
pub struct FrameSource {
    base_dir: PathBuf,
    segments: Vec<SegmentMeta>,
    cache: HashMap<u32, Arc<Vec<FrameFeature>>>,
    shape: Option<(usize, usize)>,
    violations: usize,
    loads: usize,
}

impl FrameSource {
    pub fn new(manifest: &SessionManifest, base_dir: impl AsRef<Path>) -> Self {
        Self {
            base_dir: base_dir.as_ref().to_path_buf(),
            segments: manifest.segments.clone(),
            cache: HashMap::new(),
            shape: None,
            violations: 0,
            loads: 0,
        }
    }

    pub fn violations(&self) -> usize {
        self.violations
    }

    /// Number of segment files read from disk.
    pub fn loads(&self) -> usize {
        self.loads
    }

    /// Frames of one segment, as seen by an observer at time `now`.
    pub fn segment_frames(&mut self, segment_id: u32, now: f64) -> Result<Arc<Vec<FrameFeature>>, SimError> {
        let seg =
            self.segments.iter().find(|s| s.segment_id == segment_id).cloned().ok_or(SimError::Manifest(
                crate::store::ManifestError::Segment(segment_id, "unknown segment".into()),
            ))?;
        if seg.end_s > now {
            log::error!("segment {segment_id} (ends {}) read at t={now}", seg.end_s);
            self.violations += 1;
        }
        let frames = match self.cache.get(&segment_id) {
            Some(f) => Arc::clone(f),
            None => {
                let path = if seg.embedding_ref.is_absolute() {
                    seg.embedding_ref.clone()
                } else {
                    self.base_dir.join(&seg.embedding_ref)
                };
                let frames =
                    load_embeddings(&path).map_err(|source| SimError::Embeddings { segment: segment_id, source })?;
                if let Some(first) = frames.first() {
                    let got = (first.rows(), first.dim());
                    match self.shape {
                        Some(expected) if expected != got => {
                            return Err(SimError::FrameShape { segment: segment_id, expected, got })
                        }
                        _ => self.shape = Some(got),
                    }
                }
                self.loads += 1;
                let frames = Arc::new(frames);
                self.cache.insert(segment_id, Arc::clone(&frames));
                frames
            }
        };
        self.violations += frames.iter().filter(|f| f.timestamp() > now).count();
        Ok(frames)
    }

    /// All frames of segments that have ended by `now`, in segment order.
    pub fn frames_until(&mut self, now: f64) -> Result<Vec<FrameFeature>, SimError> {
        let ready: Vec<u32> = self.segments.iter().filter(|s| s.end_s <= now).map(|s| s.segment_id).collect();
        let mut out = Vec::new();
        for id in ready {
            out.extend(self.segment_frames(id, now)?.iter().cloned());
        }
        Ok(out)
    }
}
