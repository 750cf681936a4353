//! Streaming-session simulation, synthetic sessions and evaluation.

mod config;
mod error;
mod frames;
mod report;
mod simulate;
mod synthetic;

pub use config::{EngineConfig, HistoryAnswers, ProviderEndpoints, RetrievalMode};
pub use error::SimError;
pub use frames::FrameSource;
pub use report::{eval, EvalSummary, QuestionRecord, ReportSummary, SimulationReport};
pub use simulate::{simulate, simulate_with, Providers};
pub use synthetic::{make_synthetic, write_session, SyntheticSession, SyntheticSpec, TOPICS};
