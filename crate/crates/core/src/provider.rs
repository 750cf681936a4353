//! External model endpoints.
//!
//! Every provider speaks a small JSON protocol over a [`JsonTransport`]. The
//! request always carries a `task` discriminator:
//!
//! | task              | request fields                                   | response          |
//! |-------------------|--------------------------------------------------|-------------------|
//! | `summarize`       | `prompt`, `tokens: [[f32]]`                      | `hidden_states: [[f32]]` |
//! | `embed`           | `text`                                           | `vector: [f32]`   |
//! | `retrieve`        | `history: [{id, question, answer}]`, `question`  | `reply: string`   |
//! | `score_relevance` | `current: {question, answer}`, `prior: {..}`     | `score: f64`      |
//! | `generate`        | `layout`, `question`                             | `answer: string`  |
//!
//! A reply carrying a string `error` field is reported as a rejection.
//!
//! Offline fallbacks for each role live next to the code that uses them.

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::store::QaRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("provider rejected request: {0}")]
    Rejected(String),
}

/// Moves one JSON request to a model endpoint and returns its JSON reply.
pub trait JsonTransport: Send + Sync {
    fn call(&self, request: &Value) -> Result<Value, ProviderError>;
}

impl<F> JsonTransport for F
where
    F: Fn(&Value) -> Result<Value, ProviderError> + Send + Sync,
{
    fn call(&self, request: &Value) -> Result<Value, ProviderError> {
        self(request)
    }
}

/// Produces final-layer hidden states for a token sequence plus prompt.
pub trait Summarizer: Send + Sync {
    fn id(&self) -> &str;
    fn hidden_states(&self, prompt: &str, tokens: &[&[f32]]) -> Result<Vec<Vec<f32>>, ProviderError>;
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn embed(&self, text: &str) -> Result<Vec<f32>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub id: u32,
    pub question: String,
    pub answer: String,
}

/// Returns the raw constrained reply of a retrieval model.
pub trait RetrievalModel: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, history: &[HistoryItem], question: &str) -> Result<String, ProviderError>;
}

pub trait RelevanceScorer: Send + Sync {
    fn id(&self) -> &str;
    fn score(&self, current: &QaRecord, prior: &QaRecord) -> Result<f64, ProviderError>;
}

/// Everything an answer generator sees for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub question: String,
    /// Rendered context layout.
    pub layout: String,
    pub visual_event_ids: Vec<usize>,
    pub text_qa_ids: Vec<u32>,
}

pub trait Generator: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError>;
}

#[derive(Serialize)]
struct QaText<'a> {
    question: &'a str,
    answer: &'a str,
}

/// Adapter that implements every provider role on top of one transport.
pub struct JsonProvider<T> {
    id: String,
    transport: T,
}

impl<T: JsonTransport> JsonProvider<T> {
    pub fn new(id: impl Into<String>, transport: T) -> Self {
        Self { id: id.into(), transport }
    }

    fn field<R: DeserializeOwned>(&self, request: Value, key: &str) -> Result<R, ProviderError> {
        let mut reply = self.transport.call(&request)?;
        if let Some(err) = reply.get("error").and_then(Value::as_str) {
            return Err(ProviderError::Rejected(err.to_string()));
        }
        let v = reply
            .get_mut(key)
            .map(Value::take)
            .ok_or_else(|| ProviderError::BadResponse(format!("missing `{key}`")))?;
        serde_json::from_value(v).map_err(|e| ProviderError::BadResponse(format!("`{key}`: {e}")))
    }
}

impl<T: JsonTransport> Summarizer for JsonProvider<T> {
    fn id(&self) -> &str {
        &self.id
    }

    fn hidden_states(&self, prompt: &str, tokens: &[&[f32]]) -> Result<Vec<Vec<f32>>, ProviderError> {
        let req = serde_json::json!({ "task": "summarize", "prompt": prompt, "tokens": tokens });
        self.field(req, "hidden_states")
    }
}

impl<T: JsonTransport> Embedder for JsonProvider<T> {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>, ProviderError> {
        self.field(serde_json::json!({ "task": "embed", "text": text }), "vector")
    }
}

impl<T: JsonTransport> RetrievalModel for JsonProvider<T> {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, history: &[HistoryItem], question: &str) -> Result<String, ProviderError> {
        let req = serde_json::json!({ "task": "retrieve", "history": history, "question": question });
        self.field(req, "reply")
    }
}

impl<T: JsonTransport> RelevanceScorer for JsonProvider<T> {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&self, current: &QaRecord, prior: &QaRecord) -> Result<f64, ProviderError> {
        let req = serde_json::json!({
            "task": "score_relevance",
            "current": QaText { question: &current.question, answer: &current.answer },
            "prior": QaText { question: &prior.question, answer: &prior.answer },
        });
        self.field(req, "score")
    }
}

impl<T: JsonTransport> Generator for JsonProvider<T> {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ProviderError> {
        let req = serde_json::json!({ "task": "generate", "layout": request.layout, "question": request.question });
        self.field(req, "answer")
    }
}
