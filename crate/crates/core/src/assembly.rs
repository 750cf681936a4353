//! Time-ordered interleaving of visual units and retrieved dialogue, and the
//! hand-off to an answer generator.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::{token_count, VisualContent, VisualUnit};
use crate::provider::{GenerationRequest, Generator, ProviderError};
use crate::text;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("generator {generator} failed ({visual_units} visual units, {text_units} text units, {visual_tokens} visual tokens): {source}")]
    Generator { generator: String, visual_units: usize, text_units: usize, visual_tokens: usize, source: ProviderError },
    #[error("generator {0} returned an empty answer")]
    EmptyAnswer(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextUnit {
    pub qa_id: u32,
    pub question: String,
    pub answer: String,
    pub asked_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContextUnit {
    Visual(VisualUnit),
    Text(TextUnit),
}

impl ContextUnit {
    /// Interleaving key: visual units sit at their event's start time, text at its ask time.
    pub fn time(&self) -> f64 {
        match self {
            ContextUnit::Visual(v) => v.start_s,
            ContextUnit::Text(t) => t.asked_at,
        }
    }

    fn sort_key(&self) -> (f64, u8, u64) {
        match self {
            ContextUnit::Visual(v) => (v.start_s, 0, v.event_id as u64),
            ContextUnit::Text(t) => (t.asked_at, 1, t.qa_id as u64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPackage {
    pub units: Vec<ContextUnit>,
    pub delta: bool,
    pub current_question: String,
}

impl ContextPackage {
    pub fn visual_units(&self) -> impl Iterator<Item = &VisualUnit> {
        self.units.iter().filter_map(|u| match u {
            ContextUnit::Visual(v) => Some(v),
            ContextUnit::Text(_) => None,
        })
    }

    pub fn text_units(&self) -> impl Iterator<Item = &TextUnit> {
        self.units.iter().filter_map(|u| match u {
            ContextUnit::Text(t) => Some(t),
            ContextUnit::Visual(_) => None,
        })
    }

    pub fn visual_tokens(&self) -> usize {
        token_count(&self.visual_units().cloned().collect::<Vec<_>>())
    }

    /// Whitespace-free terms across dialogue units and the current question.
    pub fn text_tokens(&self) -> usize {
        self.text_units().map(|t| text::terms(&t.question).len() + text::terms(&t.answer).len()).sum::<usize>()
            + text::terms(&self.current_question).len()
    }
}

/// Merges visual units and retrieved QA pairs into one timeline.
///
/// Order is by time, visual before text on ties, then event id / qa id, so
/// input order never matters. With `delta` set all visual units are dropped.
/// A QA retrieved twice appears once.
pub fn assemble(visual: Vec<VisualUnit>, retrieved: Vec<TextUnit>, delta: bool, question: &str) -> ContextPackage {
    let mut texts = retrieved;
    texts.sort_by(|a, b| a.qa_id.cmp(&b.qa_id).then(a.asked_at.total_cmp(&b.asked_at)));
    texts.dedup_by_key(|t| t.qa_id);

    let mut units: Vec<ContextUnit> = texts.into_iter().map(ContextUnit::Text).collect();
    if !delta {
        units.extend(visual.into_iter().map(ContextUnit::Visual));
    }
    units.sort_by(|a, b| {
        let (ta, ra, ia) = a.sort_key();
        let (tb, rb, ib) = b.sort_key();
        ta.total_cmp(&tb).then(ra.cmp(&rb)).then(ia.cmp(&ib))
    });
    ContextPackage { units, delta, current_question: question.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutTemplate {
    /// Tagged plain text, one block per unit.
    #[default]
    Plain,
    /// Compact JSON with placeholder blocks instead of raw features.
    Json,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayoutBlock<'a> {
    Visual { time: f64, event_id: usize, mode: &'a str, frames: usize, tokens: usize },
    Text { time: f64, qa_id: u32, question: &'a str, answer: &'a str },
}

#[derive(Serialize)]
struct JsonLayout<'a> {
    delta: u8,
    context: Vec<LayoutBlock<'a>>,
    question: &'a str,
}

fn mode(v: &VisualUnit) -> &'static str {
    match v.content {
        VisualContent::Preserved { .. } => "preserved",
        VisualContent::Pooled { .. } => "pooled",
    }
}

/// Deterministic serialization of a package for a generator.
pub fn render_layout(package: &ContextPackage, template: LayoutTemplate) -> String {
    match template {
        LayoutTemplate::Plain => {
            let mut out = String::new();
            for unit in &package.units {
                match unit {
                    ContextUnit::Visual(v) => {
                        let _ = writeln!(
                            out,
                            "[t={:.3}] <visual event={} mode={} frames={} tokens={}/>",
                            v.start_s,
                            v.event_id,
                            mode(v),
                            v.frame_count(),
                            v.token_count()
                        );
                    }
                    ContextUnit::Text(t) => {
                        let _ = writeln!(out, "[t={:.3}] Q({}): {}", t.asked_at, t.qa_id, t.question);
                        let _ = writeln!(out, "A({}): {}", t.qa_id, t.answer);
                    }
                }
            }
            let _ = writeln!(out, "<question>{}</question>", package.current_question);
            out
        }
        LayoutTemplate::Json => {
            let context = package
                .units
                .iter()
                .map(|u| match u {
                    ContextUnit::Visual(v) => LayoutBlock::Visual {
                        time: v.start_s,
                        event_id: v.event_id,
                        mode: mode(v),
                        frames: v.frame_count(),
                        tokens: v.token_count(),
                    },
                    ContextUnit::Text(t) => {
                        LayoutBlock::Text { time: t.asked_at, qa_id: t.qa_id, question: &t.question, answer: &t.answer }
                    }
                })
                .collect();
            let layout = JsonLayout { delta: package.delta as u8, context, question: &package.current_question };
            serde_json::to_string(&layout).expect("layout is plain data")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub qa_id: u32,
    pub answer: String,
    pub visual_tokens: usize,
    pub text_tokens: usize,
    pub provider: String,
}

/// Offline generator whose answer is a digest of the question and the ids of
/// the context units it was given.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoGenerator;

impl Generator for EchoGenerator {
    fn id(&self) -> &str {
        "fallback-echo"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        let join = |ids: Vec<String>| ids.join(",");
        Ok(format!(
            "echo|q={}|visual=[{}]|text=[{}]",
            text::normalize(&request.question),
            join(request.visual_event_ids.iter().map(|i| i.to_string()).collect()),
            join(request.text_qa_ids.iter().map(|i| i.to_string()).collect()),
        ))
    }
}

pub fn answer(
    package: &ContextPackage,
    qa_id: u32,
    generator: &dyn Generator,
    template: LayoutTemplate,
) -> Result<AnswerRecord, AssemblyError> {
    let request = GenerationRequest {
        question: package.current_question.clone(),
        layout: render_layout(package, template),
        visual_event_ids: package.visual_units().map(|v| v.event_id).collect(),
        text_qa_ids: package.text_units().map(|t| t.qa_id).collect(),
    };
    let visual_tokens = package.visual_tokens();
    let answer = generator.generate(&request).map_err(|source| AssemblyError::Generator {
        generator: generator.id().to_string(),
        visual_units: request.visual_event_ids.len(),
        text_units: request.text_qa_ids.len(),
        visual_tokens,
        source,
    })?;
    if answer.trim().is_empty() {
        return Err(AssemblyError::EmptyAnswer(generator.id().to_string()));
    }
    Ok(AnswerRecord {
        qa_id,
        answer,
        visual_tokens,
        text_tokens: package.text_tokens(),
        provider: generator.id().to_string(),
    })
}
