use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use crate::assembly::{answer, assemble, EchoGenerator, TextUnit};
use crate::cluster::{choose_k, cluster_with, events_from};
use crate::compress::{
    compress_stream_with, compression_ratio, embed_event, embed_question, token_count, uncompressed_token_count,
    HashEmbedder,
};
use crate::dataset::{derive_seed, PathEntry};
use crate::provider::{Embedder, Generator, Summarizer};
use crate::retrieval::{confusion, DialogueHistory, HistoryEntry, LexicalRetriever, RetrievalOutput, Retriever};
use crate::store::{QaRecord, SessionManifest};
use crate::Exec;

use super::{EngineConfig, FrameSource, HistoryAnswers, QuestionRecord, RetrievalMode, SimError, SimulationReport};

/// Model roles used by the simulator. `None` selects the offline stand-in:
/// local mean pooling, a hashing embedder sized to the frame dimension,
/// lexical retrieval and the echo generator.
#[derive(Default)]
pub struct Providers {
    pub summarizer: Option<Box<dyn Summarizer>>,
    pub embedder: Option<Box<dyn Embedder>>,
    /// Required when the retrieval mode is `provider`.
    pub retriever: Option<Box<dyn Retriever>>,
    pub generator: Option<Box<dyn Generator>>,
}

struct Step<'a> {
    manifest: &'a SessionManifest,
    config: &'a EngineConfig,
    providers: &'a Providers,
    retriever: Option<&'a dyn Retriever>,
    exec: Exec,
}

impl Step<'_> {
    fn run(
        &self,
        index: usize,
        entry: &PathEntry,
        qa: &QaRecord,
        source: &mut FrameSource,
        history: &DialogueHistory,
    ) -> Result<QuestionRecord, SimError> {
        let config = self.config;
        let frames = source.frames_until(entry.asked_at)?;
        if frames.is_empty() {
            return Err(SimError::NoFrames(entry.asked_at));
        }

        let k = choose_k(frames.len(), config.k_ratio);
        let clustering =
            cluster_with(&frames, &config.cluster_config(k, derive_seed(config.seed, index as u64)), self.exec)?;
        let events = events_from(&clustering, &frames)?;

        let summarizer = self.providers.summarizer.as_deref();
        let embeddings = self
            .exec
            .map(&events, |e| embed_event(e, &frames, summarizer, config.fallback_on_provider_error))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        let hash = HashEmbedder::new(frames[0].dim());
        let embedder: &dyn Embedder = self.providers.embedder.as_deref().unwrap_or(&hash);
        let q = embed_question(&qa.question, embedder)?;
        let units = compress_stream_with(&events, &embeddings, &frames, &q, &config.compression(), self.exec)?;

        let history_ids = history.ids();
        let gold: BTreeSet<u32> = entry.relevant_ids.intersection(&history_ids).copied().collect();
        let retrieval = match config.retrieval_mode {
            RetrievalMode::Oracle => RetrievalOutput::new(gold.iter().copied(), false),
            _ => self.retriever.expect("checked before the loop").retrieve(history, &qa.question)?,
        };
        let counts = confusion(&retrieval.selected_ids, &gold, &history_ids)?;

        let texts: Vec<TextUnit> = retrieval
            .selected_ids
            .iter()
            .filter_map(|id| history.get(*id))
            .map(|h| TextUnit {
                qa_id: h.qa_id,
                question: h.question.clone(),
                answer: h.answer.clone(),
                asked_at: h.asked_at,
            })
            .collect();
        let record = QuestionRecord {
            index,
            qa_id: qa.qa_id,
            qa_type: qa.qa_type,
            asked_at: entry.asked_at,
            frames: frames.len(),
            k,
            iterations: clustering.iterations,
            final_delta: clustering.final_delta,
            events: events.len(),
            preserved_events: units.iter().filter(|u| u.is_preserved()).count(),
            visual_tokens: token_count(&units),
            uncompressed_tokens: uncompressed_token_count(&units),
            compression_ratio: compression_ratio(&units),
            retrieval: None,
            gold_ids: gold,
            confusion: Some(counts),
            context_visual_tokens: 0,
            context_text_units: 0,
            context_text_tokens: 0,
            answer: None,
            answer_provider: None,
            wall_ms: None,
            error: None,
        };

        let package = assemble(units, texts, retrieval.delta, &qa.question);
        let generator: &dyn Generator = self.providers.generator.as_deref().unwrap_or(&EchoGenerator);
        let reply = answer(&package, qa.qa_id, generator, config.layout)?;
        Ok(QuestionRecord {
            retrieval: Some(retrieval),
            context_visual_tokens: reply.visual_tokens,
            context_text_units: package.text_units().count(),
            context_text_tokens: reply.text_tokens,
            answer: Some(reply.answer),
            answer_provider: Some(reply.provider),
            ..record
        })
    }

    fn failed(&self, index: usize, entry: &PathEntry, qa: &QaRecord, error: &SimError) -> QuestionRecord {
        QuestionRecord {
            index,
            qa_id: qa.qa_id,
            qa_type: qa.qa_type,
            asked_at: entry.asked_at,
            frames: 0,
            k: 0,
            iterations: 0,
            final_delta: 0.0,
            events: 0,
            preserved_events: 0,
            visual_tokens: 0,
            uncompressed_tokens: 0,
            compression_ratio: 0.0,
            retrieval: None,
            gold_ids: BTreeSet::new(),
            confusion: None,
            context_visual_tokens: 0,
            context_text_units: 0,
            context_text_tokens: 0,
            answer: None,
            answer_provider: None,
            wall_ms: None,
            error: Some(format!("{}: {error}", error.kind())),
        }
    }
}

pub fn simulate(
    manifest: &SessionManifest,
    base_dir: impl AsRef<Path>,
    stream_id: u32,
    config: &EngineConfig,
    providers: &Providers,
) -> Result<SimulationReport, SimError> {
    simulate_with(manifest, base_dir, stream_id, config, providers, Exec::default())
}

/// Replays one dialogue stream question by question.
///
/// Each question sees only frames from segments that ended by its ask time
/// and only the dialogue that preceded it. A failing question is recorded
/// with its error and the stream continues; it does not enter the history.
pub fn simulate_with(
    manifest: &SessionManifest,
    base_dir: impl AsRef<Path>,
    stream_id: u32,
    config: &EngineConfig,
    providers: &Providers,
    exec: Exec,
) -> Result<SimulationReport, SimError> {
    manifest.validate()?;
    config.compression().validate()?;
    let stream = manifest.stream(stream_id).ok_or(SimError::UnknownStream(stream_id))?;

    let lexical = LexicalRetriever { threshold: config.retrieval_threshold };
    let retriever: Option<&dyn Retriever> = match config.retrieval_mode {
        RetrievalMode::Fallback => Some(&lexical),
        RetrievalMode::Provider => {
            Some(providers.retriever.as_deref().ok_or(SimError::MissingProvider { role: "retriever" })?)
        }
        RetrievalMode::Oracle => None,
    };
    let step = Step { manifest, config, providers, retriever, exec };

    let mut source = FrameSource::new(manifest, base_dir);
    let mut history = DialogueHistory::new();
    let mut records = Vec::with_capacity(stream.entries.len());
    for (index, entry) in stream.entries.iter().enumerate() {
        let qa = step
            .manifest
            .qa(entry.qa_id)
            .ok_or_else(|| SimError::Schema(format!("stream entry {index} names unknown qa {}", entry.qa_id)))?;
        let started = Instant::now();
        let mut record = match step.run(index, entry, qa, &mut source, &history) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("question {} (qa {}) failed: {e}", index, qa.qa_id);
                step.failed(index, entry, qa, &e)
            }
        };
        if config.record_timing {
            record.wall_ms = Some(started.elapsed().as_secs_f64() * 1e3);
        }
        if let Some(generated) = &record.answer {
            let answer = match config.history_answers {
                HistoryAnswers::Generated => generated.clone(),
                HistoryAnswers::Gold => qa.answer.clone(),
            };
            history.push(HistoryEntry {
                qa_id: qa.qa_id,
                question: qa.question.clone(),
                answer,
                asked_at: entry.asked_at,
            })?;
        }
        records.push(record);
    }
    Ok(SimulationReport::new(manifest.video_id.clone(), stream_id, records, source.violations(), config.clone()))
}
