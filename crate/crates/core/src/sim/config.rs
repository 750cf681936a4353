use serde::{Deserialize, Serialize};

use crate::assembly::LayoutTemplate;
use crate::cluster::{ClusterConfig, KRatio, DEFAULT_ALPHA_TIME, DEFAULT_EPSILON, DEFAULT_MAX_ITERS};
use crate::compress::{CompressionConfig, DEFAULT_THETA};
use crate::dataset::{PathConfig, DEFAULT_ALPHA_LEN, DEFAULT_NUM_PATHS};
use crate::retrieval::DEFAULT_OVERLAP_THRESHOLD;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    /// Lexical-overlap stand-in.
    #[default]
    Fallback,
    /// The configured retrieval model endpoint.
    Provider,
    /// Gold relevant sets; an upper bound for the rest of the pipeline.
    Oracle,
}

/// Which answers enter the dialogue history after each question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryAnswers {
    #[default]
    Generated,
    Gold,
}

/// Endpoint URLs; an absent entry means the offline fallback for that role.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderEndpoints {
    pub summarizer: Option<String>,
    pub embedder: Option<String>,
    pub retriever: Option<String>,
    pub scorer: Option<String>,
    pub generator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub k_ratio: KRatio,
    pub alpha_time: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub theta: f64,
    pub retrieval_mode: RetrievalMode,
    pub retrieval_threshold: f64,
    pub history_answers: HistoryAnswers,
    pub alpha_len: f64,
    pub num_paths: usize,
    pub basic_per_segment: usize,
    pub complex_per_segment: usize,
    pub force_global: bool,
    pub seed: u64,
    pub layout: LayoutTemplate,
    /// Fall back to the local path when a summarizer call fails.
    pub fallback_on_provider_error: bool,
    /// Adds per-question wall time to reports, which makes them non-reproducible.
    pub record_timing: bool,
    pub providers: ProviderEndpoints,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            k_ratio: KRatio::default(),
            alpha_time: DEFAULT_ALPHA_TIME,
            epsilon: DEFAULT_EPSILON,
            max_iters: DEFAULT_MAX_ITERS,
            theta: DEFAULT_THETA,
            retrieval_mode: RetrievalMode::default(),
            retrieval_threshold: DEFAULT_OVERLAP_THRESHOLD,
            history_answers: HistoryAnswers::default(),
            alpha_len: DEFAULT_ALPHA_LEN,
            num_paths: DEFAULT_NUM_PATHS,
            basic_per_segment: 2,
            complex_per_segment: 2,
            force_global: false,
            seed: 0,
            layout: LayoutTemplate::default(),
            fallback_on_provider_error: true,
            record_timing: false,
            providers: ProviderEndpoints::default(),
        }
    }
}

impl EngineConfig {
    pub fn cluster_config(&self, k: usize, seed: u64) -> ClusterConfig {
        ClusterConfig { k, alpha_time: self.alpha_time, max_iters: self.max_iters, epsilon: self.epsilon, seed }
    }

    pub fn compression(&self) -> CompressionConfig {
        CompressionConfig { theta: self.theta }
    }

    pub fn path_config(&self) -> PathConfig {
        PathConfig {
            alpha_len: self.alpha_len,
            num_paths: self.num_paths,
            basic_per_segment: self.basic_per_segment,
            complex_per_segment: self.complex_per_segment,
            force_global: self.force_global,
            seed: self.seed,
        }
    }
}
