//! Session manifest: segments, the annotated QA pool and generated dialogue streams.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DialoguePath;

pub const SCHEMA_VERSION: u32 = 1;

/// Relevance scores live on the closed range `[0, 7]`.
pub const MAX_RELEVANCE: f64 = 7.0;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error("segment {0}: {1}")]
    Segment(u32, String),
    #[error("qa {0}: {1}")]
    Qa(u32, String),
    #[error("stream {0}: {1}")]
    Stream(u32, String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Question tier: what context a question type depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Basic,
    Streaming,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QaType {
    Attributes,
    Objects,
    Actions,
    CoReference,
    SequencePerception,
    DialogueRecalling,
    DynamicUpdating,
    ObjectTracking,
    CausalReasoning,
    GlobalAnalysis,
    OverallSummary,
}

impl QaType {
    pub const ALL: [QaType; 11] = [
        QaType::Attributes,
        QaType::Objects,
        QaType::Actions,
        QaType::CoReference,
        QaType::SequencePerception,
        QaType::DialogueRecalling,
        QaType::DynamicUpdating,
        QaType::ObjectTracking,
        QaType::CausalReasoning,
        QaType::GlobalAnalysis,
        QaType::OverallSummary,
    ];

    pub fn tier(self) -> Tier {
        use QaType::*;
        match self {
            Attributes | Objects | Actions | CoReference => Tier::Basic,
            SequencePerception | DialogueRecalling | DynamicUpdating | ObjectTracking | CausalReasoning => {
                Tier::Streaming
            }
            GlobalAnalysis | OverallSummary => Tier::Global,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub segment_id: u32,
    pub start_s: f64,
    pub end_s: f64,
    /// Embedding file, relative to the manifest's directory unless absolute.
    pub embedding_ref: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub qa_id: u32,
    pub segment_id: u32,
    pub qa_type: QaType,
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub relevant_ids: BTreeSet<u32>,
    /// Relevance of each prior QA to this one, keyed by the prior's id.
    #[serde(default)]
    pub relevance_scores: BTreeMap<u32, f64>,
}

impl QaRecord {
    pub fn tier(&self) -> Tier {
        self.qa_type.tier()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub schema_version: u32,
    pub video_id: String,
    pub segments: Vec<SegmentMeta>,
    pub qa_pool: Vec<QaRecord>,
    #[serde(default)]
    pub dialogue_streams: Vec<DialoguePath>,
}

impl SessionManifest {
    pub fn new(video_id: impl Into<String>, segments: Vec<SegmentMeta>, qa_pool: Vec<QaRecord>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            video_id: video_id.into(),
            segments,
            qa_pool,
            dialogue_streams: Vec::new(),
        }
    }

    pub fn segment(&self, segment_id: u32) -> Option<&SegmentMeta> {
        self.segments.iter().find(|s| s.segment_id == segment_id)
    }

    /// Chronological position of a segment.
    pub fn segment_position(&self, segment_id: u32) -> Option<usize> {
        self.segments.iter().position(|s| s.segment_id == segment_id)
    }

    pub fn qa(&self, qa_id: u32) -> Option<&QaRecord> {
        self.qa_pool.iter().find(|q| q.qa_id == qa_id)
    }

    pub fn qa_index(&self) -> HashMap<u32, &QaRecord> {
        self.qa_pool.iter().map(|q| (q.qa_id, q)).collect()
    }

    /// Chronological sort key of a QA: its segment's position, then its id.
    pub fn qa_order(&self, qa: &QaRecord) -> Option<(usize, u32)> {
        self.segment_position(qa.segment_id).map(|p| (p, qa.qa_id))
    }

    pub fn stream(&self, stream_id: u32) -> Option<&DialoguePath> {
        self.dialogue_streams.iter().find(|s| s.stream_id == stream_id)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ManifestError::SchemaVersion(self.schema_version));
        }
        let mut seen = BTreeSet::new();
        let mut prev_end = f64::NEG_INFINITY;
        for s in &self.segments {
            let err = |m: &str| ManifestError::Segment(s.segment_id, m.to_string());
            if s.segment_id < 1 {
                return Err(err("segment ids start at 1"));
            }
            if !seen.insert(s.segment_id) {
                return Err(err("duplicate segment id"));
            }
            if !(s.start_s.is_finite() && s.end_s.is_finite() && s.start_s >= 0.0 && s.start_s < s.end_s) {
                return Err(err("requires 0 <= start_s < end_s"));
            }
            if s.start_s < prev_end {
                return Err(err("overlaps or precedes the previous segment"));
            }
            prev_end = s.end_s;
        }

        let mut order = HashMap::new();
        for q in &self.qa_pool {
            let pos = self
                .segment_position(q.segment_id)
                .ok_or_else(|| ManifestError::Qa(q.qa_id, format!("unknown segment {}", q.segment_id)))?;
            if order.insert(q.qa_id, (pos, q.qa_id)).is_some() {
                return Err(ManifestError::Qa(q.qa_id, "duplicate qa id".into()));
            }
        }
        for q in &self.qa_pool {
            let me = order[&q.qa_id];
            let earlier = |id: &u32| order.get(id).is_some_and(|o| *o < me);
            if let Some(bad) = q.relevant_ids.iter().find(|id| !earlier(id)) {
                return Err(ManifestError::Qa(q.qa_id, format!("relevant id {bad} is not an earlier qa")));
            }
            for (id, &score) in &q.relevance_scores {
                if !earlier(id) {
                    return Err(ManifestError::Qa(q.qa_id, format!("scored id {id} is not an earlier qa")));
                }
                if !(0.0..=MAX_RELEVANCE).contains(&score) {
                    return Err(ManifestError::Qa(q.qa_id, format!("score {score} for {id} outside [0,7]")));
                }
            }
        }

        let mut stream_ids = BTreeSet::new();
        for path in &self.dialogue_streams {
            let err = |m: String| ManifestError::Stream(path.stream_id, m);
            if !stream_ids.insert(path.stream_id) {
                return Err(err("duplicate stream id".into()));
            }
            let mut in_path = BTreeSet::new();
            let mut prev_pos = 0usize;
            for e in &path.entries {
                if !order.contains_key(&e.qa_id) {
                    return Err(err(format!("unknown qa {}", e.qa_id)));
                }
                if !in_path.insert(e.qa_id) {
                    return Err(err(format!("qa {} appears twice", e.qa_id)));
                }
                let pos = self
                    .segment_position(e.segment_id)
                    .ok_or_else(|| err(format!("unknown segment {}", e.segment_id)))?;
                if pos < prev_pos {
                    return Err(err("entries are not chronological".into()));
                }
                prev_pos = pos;
                if let Some(bad) = e.relevant_ids.iter().find(|id| !in_path.contains(id) || **id == e.qa_id) {
                    return Err(err(format!("qa {} references {bad} which is not an earlier entry", e.qa_id)));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ManifestError> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String, ManifestError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(id: u32, a: f64, b: f64) -> SegmentMeta {
        SegmentMeta { segment_id: id, start_s: a, end_s: b, embedding_ref: format!("seg_{id}.cgse").into() }
    }

    fn qa(id: u32, seg: u32, t: QaType) -> QaRecord {
        QaRecord {
            qa_id: id,
            segment_id: seg,
            qa_type: t,
            question: format!("q{id}"),
            answer: format!("a{id}"),
            relevant_ids: BTreeSet::new(),
            relevance_scores: BTreeMap::new(),
        }
    }

    fn sample() -> SessionManifest {
        SessionManifest::new(
            "vid",
            vec![seg(1, 0.0, 10.0), seg(2, 10.0, 20.0)],
            vec![qa(1, 1, QaType::Objects), qa(2, 2, QaType::ObjectTracking)],
        )
    }

    #[test]
    fn tiers_follow_taxonomy() {
        let count = |t| QaType::ALL.iter().filter(|q| q.tier() == t).count();
        assert_eq!((count(Tier::Basic), count(Tier::Streaming), count(Tier::Global)), (4, 5, 2));
        assert_eq!(serde_json::to_string(&QaType::CoReference).unwrap(), "\"co-reference\"");
    }

    #[test]
    fn json_round_trip_with_snake_case_fields() {
        let mut m = sample();
        m.qa_pool[1].relevance_scores.insert(1, 6.0);
        m.qa_pool[1].relevant_ids.insert(1);
        let text = m.to_json().unwrap();
        assert!(text.contains("\"schema_version\": 1"));
        assert!(text.contains("\"embedding_ref\""));
        assert!(text.contains("\"dialogue_streams\""));
        assert_eq!(SessionManifest::from_json(&text).unwrap(), m);
    }

    #[test]
    fn rejects_invalid_manifests() {
        let mut m = sample();
        m.segments[1].start_s = 5.0;
        assert!(matches!(m.validate(), Err(ManifestError::Segment(2, _))));

        let mut m = sample();
        m.qa_pool[0].segment_id = 9;
        assert!(matches!(m.validate(), Err(ManifestError::Qa(1, _))));

        let mut m = sample();
        m.qa_pool[0].relevant_ids.insert(2);
        assert!(matches!(m.validate(), Err(ManifestError::Qa(1, _))));

        let mut m = sample();
        m.qa_pool[1].relevance_scores.insert(1, 7.5);
        assert!(matches!(m.validate(), Err(ManifestError::Qa(2, _))));

        let mut m = sample();
        m.schema_version = 2;
        assert!(matches!(m.validate(), Err(ManifestError::SchemaVersion(2))));
    }
}
