//! Relevance-set construction and probabilistic dialogue-path generation over
//! an annotated QA pool.

use std::collections::{BTreeSet, HashMap};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Exec;
use crate::provider::{ProviderError, RelevanceScorer};
use crate::store::{QaRecord, SessionManifest, Tier};
use crate::text;

pub const RELEVANCE_THRESHOLD: f64 = 4.0;
pub const MAX_RELEVANCE: f64 = 7.0;
pub const DEFAULT_ALPHA_LEN: f64 = 0.3;
pub const DEFAULT_NUM_PATHS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("relevance scorer {scorer} failed on ({current}, {prior}): {source}")]
    Provider { scorer: String, current: u32, prior: u32, source: ProviderError },
    #[error("relevance scorer returned non-finite score for ({current}, {prior})")]
    NonFinite { current: u32, prior: u32 },
    #[error("invalid path config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevancePair {
    pub current_id: u32,
    pub prior_id: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    /// Weight on the relevant-set size in the composite score.
    pub alpha_len: f64,
    pub num_paths: usize,
    pub basic_per_segment: usize,
    pub complex_per_segment: usize,
    /// Append every global QA at the end instead of sampling them.
    #[serde(default)]
    pub force_global: bool,
    pub seed: u64,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            alpha_len: DEFAULT_ALPHA_LEN,
            num_paths: DEFAULT_NUM_PATHS,
            basic_per_segment: 2,
            complex_per_segment: 2,
            force_global: false,
            seed: 0,
        }
    }
}

impl PathConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.alpha_len.is_finite() && self.alpha_len >= 0.0) {
            return Err(DatasetError::InvalidConfig("alpha_len must be finite and >= 0"));
        }
        if self.num_paths == 0 {
            return Err(DatasetError::InvalidConfig("num_paths must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub qa_id: u32,
    /// Segment at whose end the question is asked.
    pub segment_id: u32,
    pub asked_at: f64,
    /// Gold context: the QA's relevant set restricted to earlier entries.
    pub relevant_ids: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialoguePath {
    pub stream_id: u32,
    pub seed: u64,
    pub entries: Vec<PathEntry>,
}

impl DialoguePath {
    pub fn qa_ids(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.qa_id).collect()
    }
}

/// Offline relevance scorer: 7 x term-overlap cosine of the two QA texts.
#[derive(Debug, Clone, Copy, Default)]
pub struct OverlapScorer;

impl RelevanceScorer for OverlapScorer {
    fn id(&self) -> &str {
        "fallback-overlap"
    }

    fn score(&self, current: &QaRecord, prior: &QaRecord) -> Result<f64, ProviderError> {
        let a = format!("{} {}", current.question, current.answer);
        let b = format!("{} {}", prior.question, prior.answer);
        Ok(MAX_RELEVANCE * text::tf_cosine(&a, &b))
    }
}

/// Scores one pair, clipping to `[0, 7]`.
pub fn score_relevance(
    current: &QaRecord,
    prior: &QaRecord,
    scorer: &dyn RelevanceScorer,
) -> Result<f64, DatasetError> {
    let raw = scorer.score(current, prior).map_err(|source| DatasetError::Provider {
        scorer: scorer.id().to_string(),
        current: current.qa_id,
        prior: prior.qa_id,
        source,
    })?;
    if !raw.is_finite() {
        return Err(DatasetError::NonFinite { current: current.qa_id, prior: prior.qa_id });
    }
    let clipped = raw.clamp(0.0, MAX_RELEVANCE);
    if clipped != raw {
        log::warn!("score {raw} for ({}, {}) clipped to {clipped}", current.qa_id, prior.qa_id);
    }
    Ok(clipped)
}

/// `(current, prior)` pairs to score: every QA against each QA from a strictly
/// earlier segment.
pub fn relevance_scope(manifest: &SessionManifest) -> Vec<(u32, u32)> {
    let pos: HashMap<u32, usize> =
        manifest.qa_pool.iter().filter_map(|q| manifest.segment_position(q.segment_id).map(|p| (q.qa_id, p))).collect();
    let mut pairs = Vec::new();
    for c in &manifest.qa_pool {
        for p in &manifest.qa_pool {
            if let (Some(pc), Some(pp)) = (pos.get(&c.qa_id), pos.get(&p.qa_id)) {
                if pp < pc {
                    pairs.push((c.qa_id, p.qa_id));
                }
            }
        }
    }
    pairs
}

/// Fills `relevance_scores` for every in-scope pair.
pub fn score_pool(
    manifest: &mut SessionManifest,
    scorer: &dyn RelevanceScorer,
    exec: Exec,
) -> Result<Vec<RelevancePair>, DatasetError> {
    let pairs = relevance_scope(manifest);
    let index = manifest.qa_index();
    let scored: Vec<Result<RelevancePair, DatasetError>> = exec.map(&pairs, |&(c, p)| {
        Ok(RelevancePair { current_id: c, prior_id: p, score: score_relevance(index[&c], index[&p], scorer)? })
    });
    let scored: Vec<RelevancePair> = scored.into_iter().collect::<Result<_, _>>()?;
    for qa in &mut manifest.qa_pool {
        qa.relevance_scores.clear();
    }
    let slot: HashMap<u32, usize> = manifest.qa_pool.iter().enumerate().map(|(i, q)| (q.qa_id, i)).collect();
    for pair in &scored {
        manifest.qa_pool[slot[&pair.current_id]].relevance_scores.insert(pair.prior_id, pair.score);
    }
    Ok(scored)
}

/// Sets each QA's relevant set to the priors scoring strictly above `threshold`.
pub fn build_relevant_sets(pool: &mut [QaRecord], threshold: f64) {
    for qa in pool {
        qa.relevant_ids = qa.relevance_scores.iter().filter(|(_, &s)| s > threshold).map(|(&id, _)| id).collect();
    }
}

/// `max over j in path of RS(candidate, j) + alpha_len * |relevant set of j|`,
/// or 0 for an empty path.
pub fn composite_score(candidate: &QaRecord, path: &[u32], pool: &HashMap<u32, &QaRecord>, alpha_len: f64) -> f64 {
    path.iter()
        .map(|j| {
            let rs = candidate.relevance_scores.get(j).copied().unwrap_or_else(|| {
                log::debug!("no relevance score for ({}, {j}); using 0", candidate.qa_id);
                0.0
            });
            let len = pool.get(j).map_or(0, |q| q.relevant_ids.len());
            rs + alpha_len * len as f64
        })
        .fold(None, |best: Option<f64>, v| Some(best.map_or(v, |b| b.max(v))))
        .unwrap_or(0.0)
}

/// Softmax with max subtraction.
pub fn selection_probabilities(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Draws an index with the given probabilities.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    WeightedIndex::new(probs).expect("softmax output is a valid distribution").sample(rng)
}

/// SplitMix64 finalizer over the base seed and path index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct PathBuilder<'a> {
    pool: &'a HashMap<u32, &'a QaRecord>,
    entries: Vec<PathEntry>,
    ids: Vec<u32>,
}

impl PathBuilder<'_> {
    fn push(&mut self, qa: &QaRecord, segment_id: u32, asked_at: f64) {
        let earlier: BTreeSet<u32> = self.ids.iter().copied().collect();
        self.entries.push(PathEntry {
            qa_id: qa.qa_id,
            segment_id,
            asked_at,
            relevant_ids: qa.relevant_ids.intersection(&earlier).copied().collect(),
        });
        self.ids.push(qa.qa_id);
    }

    /// Draws up to `n` candidates one at a time, rescoring after each pick.
    fn sample_complex<R: Rng + ?Sized>(
        &mut self,
        mut candidates: Vec<&QaRecord>,
        n: usize,
        alpha_len: f64,
        segment_id: u32,
        asked_at: f64,
        rng: &mut R,
    ) {
        for _ in 0..n.min(candidates.len()) {
            let scores: Vec<f64> =
                candidates.iter().map(|c| composite_score(c, &self.ids, self.pool, alpha_len)).collect();
            let pick = sample_index(&selection_probabilities(&scores), rng);
            let qa = candidates.remove(pick);
            self.push(qa, segment_id, asked_at);
        }
    }
}

/// Builds one chronological dialogue path.
///
/// Per segment: up to `basic_per_segment` basic QAs drawn uniformly (appended
/// in id order), then up to `complex_per_segment` streaming QAs drawn by
/// composite-score softmax. Global QAs are handled after the final segment's
/// streaming QAs, either sampled the same way or all appended when
/// `force_global` is set.
pub fn generate_path<R: Rng + ?Sized>(manifest: &SessionManifest, config: &PathConfig, rng: &mut R) -> DialoguePath {
    let pool = manifest.qa_index();
    let mut builder = PathBuilder { pool: &pool, entries: Vec::new(), ids: Vec::new() };
    let by_id = |a: &&QaRecord, b: &&QaRecord| a.qa_id.cmp(&b.qa_id);

    let mut globals: Vec<&QaRecord> = manifest.qa_pool.iter().filter(|q| q.tier() == Tier::Global).collect();
    globals.sort_by(by_id);

    let last = manifest.segments.len().saturating_sub(1);
    for (pos, seg) in manifest.segments.iter().enumerate() {
        let of_tier = |tier| {
            let mut v: Vec<&QaRecord> =
                manifest.qa_pool.iter().filter(|q| q.segment_id == seg.segment_id && q.tier() == tier).collect();
            v.sort_by(by_id);
            v
        };
        let mut basics = of_tier(Tier::Basic);
        let streaming = of_tier(Tier::Streaming);
        if basics.is_empty() && streaming.is_empty() && !(pos == last && !globals.is_empty()) {
            log::info!("segment {} has no QAs; skipped", seg.segment_id);
            continue;
        }

        let take = config.basic_per_segment.min(basics.len());
        let (chosen, _) = basics.partial_shuffle(rng, take);
        let mut chosen = chosen.to_vec();
        chosen.sort_by(by_id);
        for qa in chosen {
            builder.push(qa, seg.segment_id, seg.end_s);
        }

        builder.sample_complex(streaming, config.complex_per_segment, config.alpha_len, seg.segment_id, seg.end_s, rng);

        if pos == last && !globals.is_empty() {
            if config.force_global {
                for qa in &globals {
                    builder.push(qa, seg.segment_id, seg.end_s);
                }
            } else {
                let g = std::mem::take(&mut globals);
                builder.sample_complex(g, config.complex_per_segment, config.alpha_len, seg.segment_id, seg.end_s, rng);
            }
        }
    }
    DialoguePath { stream_id: 0, seed: 0, entries: builder.entries }
}

pub fn generate_paths(manifest: &SessionManifest, config: &PathConfig) -> Result<Vec<DialoguePath>, DatasetError> {
    generate_paths_with(manifest, config, Exec::default())
}

/// `num_paths` independent paths; path `i` uses seed `derive_seed(config.seed, i)`.
pub fn generate_paths_with(
    manifest: &SessionManifest,
    config: &PathConfig,
    exec: Exec,
) -> Result<Vec<DialoguePath>, DatasetError> {
    config.validate()?;
    Ok(exec.map_range(config.num_paths, |i| {
        let seed = derive_seed(config.seed, i as u64);
        let mut path = generate_path(manifest, config, &mut ChaCha8Rng::seed_from_u64(seed));
        path.stream_id = i as u32;
        path.seed = seed;
        path
    }))
}
