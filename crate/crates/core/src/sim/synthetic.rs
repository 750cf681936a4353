use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::compress::HashEmbedder;
use crate::dataset::{build_relevant_sets, generate_paths, PathConfig, RELEVANCE_THRESHOLD};
use crate::store::{save_embeddings, FrameFeature, QaRecord, QaType, SegmentMeta, SessionManifest};

use super::SimError;

/// Object names; event `g` of a session is about `TOPICS[g % len]`.
pub const TOPICS: [&str; 16] = [
    "kettle", "bicycle", "guitar", "lantern", "umbrella", "notebook", "teapot", "camera", "scarf", "compass", "ladder",
    "basket", "violin", "helmet", "candle", "backpack",
];

const COLOURS: [&str; 5] = ["red", "green", "blue", "yellow", "grey"];
const PLACES: [&str; 4] = ["table", "shelf", "doorway", "window"];

/// Weight of the topic direction in each event's feature mean.
const TOPIC_SCALE: f64 = 3.0;
/// Norm of the random offset that keeps events apart when topic words share a hash bucket.
const OFFSET_SCALE: f64 = 2.0;
const ROW_NOISE: f64 = 0.05;
/// Relevance given to planted related pairs; the rest score at most the threshold.
const PLANTED_RELEVANCE: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub segments: usize,
    pub frames_per_segment: usize,
    /// Planted events per segment; each occupies a contiguous block of frames.
    pub events_per_segment: usize,
    pub segment_seconds: f64,
    pub rows: usize,
    pub dim: usize,
    pub basic_per_segment: usize,
    /// Streaming QAs per segment; the final segment's last slot is a global QA.
    pub complex_per_segment: usize,
    pub streams: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// The bundled session: 5 segments of 30 one-second frames, 20 QAs.
    fn default() -> Self {
        Self {
            segments: 5,
            frames_per_segment: 30,
            events_per_segment: 2,
            segment_seconds: 30.0,
            rows: 2,
            dim: 64,
            basic_per_segment: 2,
            complex_per_segment: 2,
            streams: 3,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Schema(format!("synthetic spec: {m}")));
        if self.segments == 0 || self.rows == 0 || self.dim == 0 || self.streams == 0 {
            return bad("segments, rows, dim and streams must be >= 1");
        }
        if self.events_per_segment == 0 || self.frames_per_segment < self.events_per_segment {
            return bad("need 1 <= events_per_segment <= frames_per_segment");
        }
        if !(self.segment_seconds.is_finite() && self.segment_seconds > 0.0) {
            return bad("segment_seconds must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSession {
    pub manifest: SessionManifest,
    /// Frames per segment, in manifest order.
    pub frames: Vec<Vec<FrameFeature>>,
    /// Planted event of every frame, over all segments concatenated.
    pub labels: Vec<usize>,
}

impl SyntheticSession {
    pub fn all_frames(&self) -> Vec<FrameFeature> {
        self.frames.iter().flatten().cloned().collect()
    }
}

struct Planned {
    qa_type: QaType,
    question: String,
    answer: String,
    relevant: BTreeSet<u32>,
}

fn topic(segment: usize, event: usize, per_segment: usize) -> &'static str {
    TOPICS[(segment * per_segment + event) % TOPICS.len()]
}

fn basic(slot: usize, t: &str, salt: usize) -> (QaType, String, String) {
    match slot % 4 {
        0 => (
            QaType::Attributes,
            format!("What colour is the {t}? Describe the {t}."),
            format!("The {t} is {}.", COLOURS[salt % COLOURS.len()]),
        ),
        1 => (
            QaType::Actions,
            format!("What happens to the {t} after someone reaches for the {t}?"),
            format!("Someone lifts the {t} and sets it down."),
        ),
        2 => (
            QaType::Objects,
            format!("Which object sits beside the {t}, and is the {t} moved?"),
            format!("A {} sits beside the {t}.", TOPICS[(salt + 5) % TOPICS.len()]),
        ),
        _ => (
            QaType::CoReference,
            format!("Is it still there, the same {t} as before?"),
            format!("Yes, the {t} stays in place."),
        ),
    }
}

/// Builds a session with planted events, QA texts, relevance scores and
/// dialogue streams. Deterministic in the spec.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticSession, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let e_per = spec.events_per_segment;
    let hash = HashEmbedder::new(spec.dim);
    let unit = Normal::new(0.0, OFFSET_SCALE / (spec.dim as f64).sqrt()).expect("valid sigma");
    let noise = Normal::new(0.0, ROW_NOISE).expect("valid sigma");

    let mut segments = Vec::new();
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    for s in 0..spec.segments {
        let start = s as f64 * spec.segment_seconds;
        let step = spec.segment_seconds / spec.frames_per_segment as f64;
        let means: Vec<Vec<f64>> = (0..e_per)
            .map(|e| {
                let direction = hash.project(topic(s, e, e_per));
                let norm = direction.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt().max(1.0);
                direction.iter().map(|&d| TOPIC_SCALE * d as f64 / norm + unit.sample(&mut rng)).collect()
            })
            .collect();
        let block = spec.frames_per_segment / e_per;
        let mut seg_frames = Vec::with_capacity(spec.frames_per_segment);
        for i in 0..spec.frames_per_segment {
            let e = (i / block).min(e_per - 1);
            let patches: Vec<f32> = (0..spec.rows)
                .flat_map(|_| means[e].iter().map(|m| (m + noise.sample(&mut rng)) as f32).collect::<Vec<_>>())
                .collect();
            let frame = FrameFeature::new(spec.rows, spec.dim, patches, start + (i as f64 + 0.5) * step)
                .expect("generated frames are well formed");
            seg_frames.push(frame);
            labels.push(s * e_per + e);
        }
        frames.push(seg_frames);
        segments.push(SegmentMeta {
            segment_id: s as u32 + 1,
            start_s: start,
            end_s: start + spec.segment_seconds,
            embedding_ref: PathBuf::from(format!("seg_{}.cgse", s + 1)),
        });
    }

    // QA ids are assigned segment by segment, basics first.
    let mut planned: Vec<(u32, Vec<Planned>)> = Vec::new();
    let mut basic_ids: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    let mut basic_questions: BTreeMap<u32, String> = BTreeMap::new();
    let mut streaming_ids: Vec<u32> = Vec::new();
    let mut next_id = 1u32;
    for s in 0..spec.segments {
        let mut qas = Vec::new();
        for b in 0..spec.basic_per_segment {
            let (qa_type, question, answer) = basic(b + s, topic(s, b % e_per, e_per), s * 7 + b);
            basic_ids.entry((s, b % e_per)).or_insert(next_id + qas.len() as u32);
            basic_questions.insert(next_id + qas.len() as u32, question.clone());
            qas.push(Planned { qa_type, question, answer, relevant: BTreeSet::new() });
        }
        let last = s + 1 == spec.segments;
        for c in 0..spec.complex_per_segment {
            let id = next_id + qas.len() as u32;
            let plan = if last && c + 1 == spec.complex_per_segment {
                let seen: Vec<&str> = (0..s * e_per).map(|g| TOPICS[g % TOPICS.len()]).collect();
                Planned {
                    qa_type: QaType::OverallSummary,
                    question: "Summarize everything that has happened in the video so far.".into(),
                    answer: format!("The video showed the {}.", seen.join(", the ")),
                    relevant: streaming_ids.iter().copied().collect(),
                }
            } else if s == 0 {
                let (a, b) = (topic(0, 0, e_per), topic(0, (c + 1) % e_per, e_per));
                Planned {
                    qa_type: QaType::SequencePerception,
                    question: format!("Which appeared first, the {a} or the {b}?"),
                    answer: format!("The {a} appeared first."),
                    relevant: BTreeSet::new(),
                }
            } else {
                let e = c % e_per;
                let t = topic(s - 1, e, e_per);
                let earlier = basic_ids.get(&(s - 1, e)).copied();
                let relevant: BTreeSet<u32> = earlier.into_iter().collect();
                match earlier.filter(|_| c % 2 == 1) {
                    None => Planned {
                        qa_type: QaType::ObjectTracking,
                        question: format!("Where did the {t} go? Track the {t} since it was last seen."),
                        answer: format!("The {t} was moved to the {}.", PLACES[(s + c) % PLACES.len()]),
                        relevant,
                    },
                    Some(recalled) => {
                        let recalled = &basic_questions[&recalled];
                        Planned {
                            qa_type: QaType::DialogueRecalling,
                            question: format!("What did I ask about the {t}? It was: {recalled}"),
                            answer: format!("You asked: {recalled}"),
                            relevant,
                        }
                    }
                }
            };
            if plan.qa_type.tier() == crate::store::Tier::Streaming {
                streaming_ids.push(id);
            }
            qas.push(plan);
        }
        next_id += qas.len() as u32;
        planned.push((s as u32 + 1, qas));
    }

    let mut pool = Vec::new();
    let mut id = 1u32;
    let mut earlier_segments: Vec<u32> = Vec::new();
    for (segment_id, qas) in planned {
        let first_here = id;
        for p in qas {
            // Every QA from a strictly earlier segment gets a score; unrelated
            // pairs cycle through 0, 2 and exactly the threshold.
            let relevance_scores = earlier_segments
                .iter()
                .map(|&prior| {
                    let score = if p.relevant.contains(&prior) {
                        PLANTED_RELEVANCE
                    } else {
                        [0.0, 2.0, RELEVANCE_THRESHOLD][((id + prior) % 3) as usize]
                    };
                    (prior, score)
                })
                .collect();
            pool.push(QaRecord {
                qa_id: id,
                segment_id,
                qa_type: p.qa_type,
                question: p.question,
                answer: p.answer,
                relevant_ids: BTreeSet::new(),
                relevance_scores,
            });
            id += 1;
        }
        earlier_segments.extend(first_here..id);
    }
    build_relevant_sets(&mut pool, RELEVANCE_THRESHOLD);

    let mut manifest = SessionManifest::new(format!("synthetic-{}", spec.seed), segments, pool);
    let paths = PathConfig {
        num_paths: spec.streams,
        basic_per_segment: spec.basic_per_segment,
        complex_per_segment: spec.complex_per_segment,
        seed: spec.seed,
        ..PathConfig::default()
    };
    manifest.dialogue_streams = generate_paths(&manifest, &paths)?;
    manifest.validate()?;
    Ok(SyntheticSession { manifest, frames, labels })
}

/// Writes `manifest.json` and one embedding file per segment into `dir`.
pub fn write_session(dir: impl AsRef<Path>, session: &SyntheticSession) -> Result<PathBuf, SimError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (meta, frames) in session.manifest.segments.iter().zip(&session.frames) {
        save_embeddings(dir.join(&meta.embedding_ref), frames)
            .map_err(|source| SimError::Embeddings { segment: meta.segment_id, source })?;
    }
    let path = dir.join("manifest.json");
    session.manifest.save(&path)?;
    Ok(path)
}
