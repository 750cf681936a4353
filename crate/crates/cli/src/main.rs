//! `streamqa` command-line front end.
//!
//! Every subcommand writes its result to `--out` (or stdout) and, on failure,
//! prints `{"error": {"kind", "message"}}` to stderr and exits nonzero.

mod error;
mod http;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use streamqa::cluster::{choose_k, cluster, events_from, ClusterResult, Event};
use streamqa::compress::{
    compress_stream, compression_ratio, embed_event, embed_question, token_count, uncompressed_token_count,
    HashEmbedder,
};
use streamqa::dataset::{build_relevant_sets, generate_paths, score_pool, OverlapScorer, RELEVANCE_THRESHOLD};
use streamqa::provider::{Embedder, JsonProvider, RelevanceScorer};
use streamqa::retrieval::{DialogueHistory, HistoryEntry, LexicalRetriever, ModelRetriever, Retriever};
use streamqa::sim::{
    eval, make_synthetic, simulate_with, write_session, EngineConfig, FrameSource, Providers, RetrievalMode,
    SimulationReport, SyntheticSpec,
};
use streamqa::store::{FrameFeature, ManifestError, SessionManifest};
use streamqa::Exec;

use error::CliError;
use http::HttpTransport;

#[derive(Debug, Parser)]
#[command(name = "streamqa", version, about = "Question answering over streaming video embeddings")]
struct Cli {
    /// Engine configuration (JSON); missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (directory for `make-synthetic` and multi-stream `simulate`); stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cluster the frames visible at a point in time into events.
    Cluster {
        #[arg(long)]
        manifest: PathBuf,
        /// Only segments that ended by this time (seconds); all segments by default.
        #[arg(long)]
        until: Option<f64>,
        /// Fixed cluster count instead of the configured ratio.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Cluster, then compress the events against a question.
    Compress {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        question: String,
        #[arg(long)]
        until: Option<f64>,
    },
    /// Select prior dialogue relevant to a question.
    Retrieve {
        /// JSON array of {qa_id, question, answer, asked_at}.
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        question: String,
    },
    /// Score QA-pair relevance and rebuild relevant sets; writes the updated manifest.
    ScoreRelevance {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Generate dialogue streams; writes the updated manifest.
    BuildPaths {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Replay dialogue streams and write JSON-lines reports.
    Simulate {
        #[arg(long)]
        manifest: PathBuf,
        /// Stream to replay; every stream when absent.
        #[arg(long)]
        stream: Option<u32>,
    },
    /// Aggregate one or more simulation reports.
    Eval {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Write a synthetic session (manifest plus embedding files) into `--out`.
    MakeSynthetic {
        /// Synthetic spec (JSON); the bundled session by default.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        segments: Option<usize>,
    },
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?).map_err(|source| CliError::Json { path: path.display().to_string(), source })
}

fn write(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(|source| CliError::Io { path: path.display().to_string(), source })
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output types serialize");
    s.push('\n');
    s
}

fn load_manifest(path: &Path) -> Result<SessionManifest, CliError> {
    SessionManifest::load(path).map_err(|e| match e {
        ManifestError::Io(source) => CliError::Io { path: path.display().to_string(), source },
        other => other.into(),
    })
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_frames(manifest_path: &Path, until: Option<f64>) -> Result<Vec<FrameFeature>, CliError> {
    let manifest = load_manifest(manifest_path)?;
    manifest.validate()?;
    let mut source = FrameSource::new(&manifest, base_dir(manifest_path));
    let frames = source.frames_until(until.unwrap_or(f64::INFINITY))?;
    if frames.is_empty() {
        return Err(CliError::Usage("no segment has ended by the requested time".into()));
    }
    Ok(frames)
}

fn http(url: &str) -> JsonProvider<HttpTransport> {
    JsonProvider::new(format!("http:{url}"), HttpTransport::new(url))
}

fn providers(config: &EngineConfig) -> Providers {
    let p = &config.providers;
    Providers {
        summarizer: p.summarizer.as_deref().map(|u| Box::new(http(u)) as _),
        embedder: p.embedder.as_deref().map(|u| Box::new(http(u)) as _),
        retriever: p.retriever.as_deref().map(|u| Box::new(ModelRetriever { model: http(u) }) as _),
        generator: p.generator.as_deref().map(|u| Box::new(http(u)) as _),
    }
}

fn run_cluster(
    config: &EngineConfig,
    frames: &[FrameFeature],
    k: Option<usize>,
) -> Result<(ClusterResult, Vec<Event>), CliError> {
    let k = k.unwrap_or_else(|| choose_k(frames.len(), config.k_ratio));
    let result = cluster(frames, &config.cluster_config(k, config.seed))?;
    let events = events_from(&result, frames)?;
    Ok((result, events))
}

#[derive(Serialize)]
struct EventSummary {
    event_id: usize,
    start_s: f64,
    end_s: f64,
    time_centroid: f64,
    frames: usize,
}

fn event_summaries(events: &[Event]) -> Vec<EventSummary> {
    events
        .iter()
        .map(|e| EventSummary {
            event_id: e.event_id,
            start_s: e.start_s,
            end_s: e.end_s,
            time_centroid: e.time_centroid,
            frames: e.len(),
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config: EngineConfig = match &cli.config {
        Some(path) => parse(path)?,
        None => EngineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.as_deref();

    match cli.command {
        Command::Cluster { manifest, until, k } => {
            let frames = load_frames(&manifest, until)?;
            let (result, events) = run_cluster(&config, &frames, k)?;
            write(
                out,
                &pretty(&json!({
                    "frames": frames.len(),
                    "k": result.k(),
                    "iterations": result.iterations,
                    "final_delta": result.final_delta,
                    "assignments": result.assignments,
                    "events": event_summaries(&events),
                })),
            )
        }
        Command::Compress { manifest, question, until } => {
            let frames = load_frames(&manifest, until)?;
            let (_, events) = run_cluster(&config, &frames, None)?;
            let providers = providers(&config);
            let embeddings = events
                .iter()
                .map(|e| embed_event(e, &frames, providers.summarizer.as_deref(), config.fallback_on_provider_error))
                .collect::<Result<Vec<_>, _>>()?;
            let hash = HashEmbedder::new(frames[0].dim());
            let embedder: &dyn Embedder = providers.embedder.as_deref().unwrap_or(&hash);
            let q = embed_question(&question, embedder)?;
            let units = compress_stream(&events, &embeddings, &frames, &q, &config.compression())?;
            let summary: Vec<_> = units
                .iter()
                .map(|u| {
                    json!({
                        "event_id": u.event_id,
                        "start_s": u.start_s,
                        "time_centroid": u.time_centroid,
                        "relevance": u.relevance,
                        "mode": if u.is_preserved() { "preserved" } else { "pooled" },
                        "frames": u.frame_count(),
                        "tokens": u.token_count(),
                    })
                })
                .collect();
            write(
                out,
                &pretty(&json!({
                    "theta": config.theta,
                    "units": summary,
                    "token_count": token_count(&units),
                    "uncompressed_tokens": uncompressed_token_count(&units),
                    "compression_ratio": compression_ratio(&units),
                })),
            )
        }
        Command::Retrieve { history, question } => {
            let entries: Vec<HistoryEntry> = parse(&history)?;
            let history = DialogueHistory::from_entries(entries)?;
            let lexical = LexicalRetriever { threshold: config.retrieval_threshold };
            let providers = providers(&config);
            let retriever: &dyn Retriever = match config.retrieval_mode {
                RetrievalMode::Fallback => &lexical,
                RetrievalMode::Provider => providers.retriever.as_deref().ok_or_else(|| {
                    CliError::Usage("retrieval_mode is provider but providers.retriever is unset".into())
                })?,
                RetrievalMode::Oracle => {
                    return Err(CliError::Usage("oracle retrieval needs gold sets; use simulate".into()))
                }
            };
            let output = retriever.retrieve(&history, &question)?;
            write(out, &pretty(&json!({ "retriever": retriever.id(), "reply": output.render(), "result": output })))
        }
        Command::ScoreRelevance { manifest } => {
            let mut m = load_manifest(&manifest)?;
            let remote = config.providers.scorer.as_deref().map(http);
            let scorer: &dyn RelevanceScorer = match &remote {
                Some(p) => p,
                None => &OverlapScorer,
            };
            let pairs = score_pool(&mut m, scorer, Exec::default())?;
            build_relevant_sets(&mut m.qa_pool, RELEVANCE_THRESHOLD);
            m.validate()?;
            log::info!("scored {} pairs with {}", pairs.len(), scorer.id());
            write(out, &m.to_json()?)
        }
        Command::BuildPaths { manifest } => {
            let mut m = load_manifest(&manifest)?;
            m.validate()?;
            m.dialogue_streams = generate_paths(&m, &config.path_config())?;
            m.validate()?;
            write(out, &m.to_json()?)
        }
        Command::Simulate { manifest, stream } => {
            let m = load_manifest(&manifest)?;
            let ids: Vec<u32> = match stream {
                Some(id) => vec![id],
                None => m.dialogue_streams.iter().map(|s| s.stream_id).collect(),
            };
            if ids.is_empty() {
                return Err(CliError::Usage("manifest has no dialogue streams; run build-paths first".into()));
            }
            let dir = base_dir(&manifest);
            let providers = providers(&config);
            // Streams are independent; questions within a stream stay sequential.
            let reports = Exec::default()
                .map(&ids, |&id| {
                    simulate_with(&m, &dir, id, &config, &providers, Exec::Sequential).and_then(|r| r.to_jsonl())
                })
                .into_iter()
                .collect::<Result<Vec<_>, _>>()?;
            match (ids.len(), out) {
                (1, _) => write(out, &reports[0]),
                (_, Some(dir)) => {
                    std::fs::create_dir_all(dir)
                        .map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
                    for (id, report) in ids.iter().zip(&reports) {
                        write(Some(&dir.join(format!("stream_{id}.jsonl"))), report)?;
                    }
                    Ok(())
                }
                (_, None) => Err(CliError::Usage("several streams need --out <dir>, or pick one with --stream".into())),
            }
        }
        Command::Eval { reports } => {
            let parsed = reports
                .iter()
                .map(|p| {
                    SimulationReport::from_jsonl(&read(p)?)
                        .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let per_report: BTreeMap<String, f64> =
                reports.iter().zip(&parsed).map(|(p, r)| (p.display().to_string(), r.summary.retrieval.f1)).collect();
            let summary = eval(&parsed)?;
            write(out, &pretty(&json!({ "corpus": summary, "f1_by_report": per_report })))
        }
        Command::MakeSynthetic { spec, segments } => {
            let dir = out.ok_or_else(|| CliError::Usage("make-synthetic needs --out <dir>".into()))?;
            let mut spec: SyntheticSpec = match spec {
                Some(path) => parse(&path)?,
                None => SyntheticSpec::default(),
            };
            if let Some(seed) = cli.seed {
                spec.seed = seed;
            }
            if let Some(n) = segments {
                spec.segments = n;
            }
            let session = make_synthetic(&spec)?;
            let path = write_session(dir, &session)?;
            println!(
                "{}",
                json!({ "manifest": path, "segments": spec.segments, "qas": session.manifest.qa_pool.len() })
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", CliError::Usage(e.to_string().trim_end().to_string()).to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
