use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::retrieval::{micro_average, Confusion, RetrievalMetrics, RetrievalOutput};
use crate::store::QaType;

use super::{EngineConfig, SimError};

/// Outcome of one simulated question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionRecord {
    /// Position in the dialogue stream.
    pub index: usize,
    pub qa_id: u32,
    pub qa_type: QaType,
    pub asked_at: f64,
    /// Frames visible at `asked_at`.
    pub frames: usize,
    pub k: usize,
    pub iterations: usize,
    pub final_delta: f64,
    pub events: usize,
    pub preserved_events: usize,
    pub visual_tokens: usize,
    pub uncompressed_tokens: usize,
    pub compression_ratio: f64,
    pub retrieval: Option<RetrievalOutput>,
    pub gold_ids: BTreeSet<u32>,
    pub confusion: Option<Confusion>,
    /// Visual tokens actually placed in the context (0 when the text-only flag is set).
    pub context_visual_tokens: usize,
    pub context_text_units: usize,
    pub context_text_tokens: usize,
    pub answer: Option<String>,
    pub answer_provider: Option<String>,
    /// Present only when timing is enabled in the config.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
    pub error: Option<String>,
}

impl QuestionRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSummary {
    pub video_id: String,
    pub stream_id: u32,
    pub questions: usize,
    pub failures: usize,
    pub retrieval: RetrievalMetrics,
    pub mean_compression_ratio: f64,
    pub mean_visual_tokens: f64,
    pub leakage_violations: usize,
    pub config: EngineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum Line {
    Question(QuestionRecord),
    Summary(ReportSummary),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub records: Vec<QuestionRecord>,
    pub summary: ReportSummary,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl SimulationReport {
    pub fn new(
        video_id: String,
        stream_id: u32,
        records: Vec<QuestionRecord>,
        leakage_violations: usize,
        config: EngineConfig,
    ) -> Self {
        let ok = || records.iter().filter(|r| r.is_ok());
        let summary = ReportSummary {
            video_id,
            stream_id,
            questions: records.len(),
            failures: records.len() - ok().count(),
            retrieval: micro_average(ok().filter_map(|r| r.confusion)),
            mean_compression_ratio: mean(ok().map(|r| r.compression_ratio)),
            mean_visual_tokens: mean(ok().map(|r| r.visual_tokens as f64)),
            leakage_violations,
            config,
        };
        Self { records, summary }
    }

    /// One JSON object per question, then the summary, newline-terminated.
    pub fn to_jsonl(&self) -> Result<String, SimError> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(&Line::Question(r.clone()))?);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&Line::Summary(self.summary.clone()))?);
        out.push('\n');
        Ok(out)
    }

    /// Parses and schema-checks a report: known fields only, exactly one
    /// trailing summary, and a summary consistent with the records.
    pub fn from_jsonl(text: &str) -> Result<Self, SimError> {
        let mut records = Vec::new();
        let mut summary = None;
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            if summary.is_some() {
                return Err(SimError::Schema(format!("line {}: content after summary", n + 1)));
            }
            match serde_json::from_str::<Line>(line).map_err(|e| SimError::Schema(format!("line {}: {e}", n + 1)))? {
                Line::Question(r) => records.push(r),
                Line::Summary(s) => summary = Some(s),
            }
        }
        let summary = summary.ok_or_else(|| SimError::Schema("missing summary line".into()))?;
        let report = Self { records, summary };
        report.check()?;
        Ok(report)
    }

    fn check(&self) -> Result<(), SimError> {
        let s = &self.summary;
        if s.questions != self.records.len() {
            return Err(SimError::Schema(format!(
                "summary counts {} questions, found {}",
                s.questions,
                self.records.len()
            )));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.index != i {
                return Err(SimError::Schema(format!("record {i} has index {}", r.index)));
            }
            if r.is_ok() && (r.retrieval.is_none() || r.confusion.is_none() || r.answer.is_none()) {
                return Err(SimError::Schema(format!("record {i} succeeded but is incomplete")));
            }
            if r.is_ok() && !(r.compression_ratio > 0.0 && r.compression_ratio <= 1.0) {
                return Err(SimError::Schema(format!("record {i} compression ratio {}", r.compression_ratio)));
            }
        }
        let expected = micro_average(self.records.iter().filter(|r| r.is_ok()).filter_map(|r| r.confusion));
        if expected.counts != s.retrieval.counts {
            return Err(SimError::Schema("summary confusion disagrees with records".into()));
        }
        Ok(())
    }
}

/// Corpus-level view over any number of reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub reports: usize,
    pub questions: usize,
    pub failures: usize,
    pub retrieval: RetrievalMetrics,
    pub mean_compression_ratio: f64,
    pub mean_visual_tokens: f64,
    pub mean_context_tokens: f64,
    pub leakage_violations: usize,
}

/// Micro-averages retrieval over every successful question of every report.
pub fn eval(reports: &[SimulationReport]) -> Result<EvalSummary, SimError> {
    let records: Vec<&QuestionRecord> = reports.iter().flat_map(|r| &r.records).collect();
    if records.is_empty() {
        return Err(SimError::NoRecords);
    }
    let ok: Vec<&QuestionRecord> = records.iter().copied().filter(|r| r.is_ok()).collect();
    Ok(EvalSummary {
        reports: reports.len(),
        questions: records.len(),
        failures: records.len() - ok.len(),
        retrieval: micro_average(ok.iter().filter_map(|r| r.confusion)),
        mean_compression_ratio: mean(ok.iter().map(|r| r.compression_ratio)),
        mean_visual_tokens: mean(ok.iter().map(|r| r.visual_tokens as f64)),
        mean_context_tokens: mean(ok.iter().map(|r| (r.context_visual_tokens + r.context_text_tokens) as f64)),
        leakage_violations: reports.iter().map(|r| r.summary.leakage_violations).sum(),
    })
}
