//! Prompt construction, chat sessions with and without history, and
//! transcript persistence for reproducible offline scoring.

mod parse;
mod provider;
mod store;

pub use parse::{format_numbered, parse_numbered_answers};
pub use provider::{ChatProvider, HttpProvider, MockProvider, ProviderConfig, ProviderKind};
pub use store::{cache_key, prompt_hash, StoreRecord, TranscriptStore};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusManifest, FrameCase};

/// Session opener sent once per chat session.
pub const SYSTEM_PROMPT: &str = "You are a gamer. You are playing a game tutorial. \
I will provide you some screenshots of the tutorial. Answer the questions related \
to the screenshot. Be concise and direct.";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("authentication failed for provider {provider}: {message}")]
    Auth { provider: String, message: String },
    #[error("request timed out after {attempts} attempts: {message}")]
    Timeout { attempts: u32, message: String },
    #[error("rate limited after {attempts} attempts: {message}")]
    RateLimited { attempts: u32, message: String },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("answer numbering mismatch: expected markers 1..={expected}, found {found:?}")]
    ParseMismatch { expected: usize, found: Vec<usize> },
    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("transcript store: {0}")]
    Store(String),
    #[error("no frames for version {version} tutorial {tutorial}")]
    EmptySelection { version: String, tutorial: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One message of a chat session. System turns never carry an image; user
/// turns carry at most one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
    pub image: Option<PathBuf>,
}

impl ChatTurn {
    pub fn system(text: impl Into<String>) -> Self {
        ChatTurn { role: Role::System, text: text.into(), image: None }
    }

    pub fn user(text: impl Into<String>, image: Option<PathBuf>) -> Self {
        ChatTurn { role: Role::User, text: text.into(), image }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        ChatTurn { role: Role::Assistant, text: text.into(), image: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SessionMode {
    /// Every prompt carries the entire chat history of the tutorial.
    #[serde(rename = "history")]
    WithHistory,
    /// Every prompt is an independent session: frame plus questions only.
    #[serde(rename = "no-history")]
    WithoutHistory,
}

impl SessionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SessionMode::WithHistory => "history",
            SessionMode::WithoutHistory => "no-history",
        }
    }
}

impl std::fmt::Display for SessionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SessionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "history" | "with-history" => Ok(SessionMode::WithHistory),
            "no-history" | "without-history" => Ok(SessionMode::WithoutHistory),
            other => Err(format!("unknown session mode {other:?}")),
        }
    }
}

/// Parsed answer for one question of a frame. The answer is empty only when
/// splitting failed for that index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: String,
    pub actual_answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum EntryStatus {
    Ok,
    ParseFailed { detail: String },
    AskFailed { detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub frame_id: String,
    pub prompt_hash: String,
    pub raw: String,
    pub answers: Vec<AnswerRecord>,
    #[serde(flatten)]
    pub status: EntryStatus,
    pub created_at: String,
    pub cached: bool,
}

/// Persisted outcome of one (provider, version, tutorial, mode) run,
/// entries in frame-ordinal order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub provider: String,
    pub model: String,
    pub version: String,
    pub tutorial: u32,
    pub mode: SessionMode,
    pub entries: Vec<TranscriptEntry>,
    /// True when a with-history session stopped early: the chat history is
    /// undefined past a failed turn.
    pub aborted: bool,
}

fn numbered_questions(frame: &FrameCase) -> String {
    frame
        .questions
        .iter()
        .enumerate()
        .map(|(i, q)| format!("{}. {}", i + 1, q.question))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Builds the turn list to send for a frame.
///
/// Without history the session restarts every frame: system turn plus one
/// user turn holding the image and the numbered questions. With history the
/// system turn exists only at session start and the new user turn follows
/// all prior turns.
pub fn build_prompt(
    frame: &FrameCase,
    image_path: &Path,
    mode: SessionMode,
    history: &[ChatTurn],
) -> Vec<ChatTurn> {
    assert!(!frame.questions.is_empty(), "frame {} has no questions", frame.frame_id);
    let user = ChatTurn::user(numbered_questions(frame), Some(image_path.to_path_buf()));
    match mode {
        SessionMode::WithoutHistory => vec![ChatTurn::system(SYSTEM_PROMPT), user],
        SessionMode::WithHistory => {
            let mut turns = if history.is_empty() {
                vec![ChatTurn::system(SYSTEM_PROMPT)]
            } else {
                history.to_vec()
            };
            turns.push(user);
            turns
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Skip cache lookups and re-query the provider.
    pub no_cache: bool,
    /// Parallel requests for without-history runs. With-history sessions
    /// are inherently sequential.
    pub jobs: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { no_cache: false, jobs: 1 }
    }
}

enum FrameResult {
    Answered { record: StoreRecord, cached: bool },
    Failed { frame_id: String, prompt_hash: String, detail: String },
}

fn entry_from_record(record: &StoreRecord, cached: bool) -> TranscriptEntry {
    TranscriptEntry {
        frame_id: record.frame_id.clone(),
        prompt_hash: record.prompt_hash.clone(),
        raw: record.raw.clone(),
        answers: record.answers.clone(),
        status: match &record.parse_error {
            None => EntryStatus::Ok,
            Some(detail) => EntryStatus::ParseFailed { detail: detail.clone() },
        },
        created_at: record.created_at.clone(),
        cached,
    }
}

/// Shared coordinates of one (version, tutorial, mode) session run.
struct SessionContext<'a> {
    provider: &'a dyn ChatProvider,
    store: &'a TranscriptStore,
    opts: &'a RunOptions,
    mode: SessionMode,
    version: &'a str,
    tutorial: u32,
}

/// Queries one frame: cache lookup, provider call, numbered-answer split.
/// Parse failures are recorded (empty answers, error detail kept) rather
/// than propagated; ask failures are returned as `FrameResult::Failed`.
fn query_frame(ctx: &SessionContext<'_>, frame: &FrameCase, turns: &[ChatTurn]) -> FrameResult {
    let hash = prompt_hash(turns);
    let key = cache_key(
        ctx.provider.name(),
        ctx.provider.model(),
        ctx.mode,
        ctx.version,
        ctx.tutorial,
        &frame.frame_id,
        &hash,
    );

    if !ctx.opts.no_cache {
        if let Some(record) = ctx.store.lookup(&key) {
            return FrameResult::Answered { record, cached: true };
        }
    }

    let raw = match ctx.provider.ask(turns) {
        Ok(raw) => raw,
        Err(err) => {
            return FrameResult::Failed {
                frame_id: frame.frame_id.clone(),
                prompt_hash: hash,
                detail: err.to_string(),
            }
        }
    };

    let (answers, parse_error) = match parse_numbered_answers(&raw, frame.questions.len()) {
        Ok(texts) => (
            frame
                .questions
                .iter()
                .zip(texts)
                .map(|(q, actual_answer)| AnswerRecord { question_id: q.id.clone(), actual_answer })
                .collect(),
            None,
        ),
        Err(err) => (
            // missing answers score as empty strings; the failure stays visible
            frame
                .questions
                .iter()
                .map(|q| AnswerRecord { question_id: q.id.clone(), actual_answer: String::new() })
                .collect(),
            Some(err.to_string()),
        ),
    };

    FrameResult::Answered {
        record: StoreRecord {
            key,
            provider: ctx.provider.name().to_string(),
            model: ctx.provider.model().to_string(),
            version: ctx.version.to_string(),
            tutorial: ctx.tutorial,
            frame_id: frame.frame_id.clone(),
            mode: ctx.mode,
            prompt_hash: hash,
            raw,
            answers,
            parse_error,
            created_at: crate::report::timestamp(),
        },
        cached: false,
    }
}

/// Runs every frame of one (version, tutorial) through the provider.
///
/// Frames are visited in ordinal order. With history, each answer joins the
/// session before the next frame and any failure aborts the remainder of
/// the session; without history, frames are independent and failures do not
/// stop the run. Answered frames are persisted to the store and re-runs hit
/// the cache unless `no_cache` is set.
pub fn run_tutorial(
    manifest: &CorpusManifest,
    version: &str,
    tutorial: u32,
    mode: SessionMode,
    provider: &dyn ChatProvider,
    store: &TranscriptStore,
    opts: &RunOptions,
) -> Result<Transcript, GatewayError> {
    let frames = manifest.frames_for(version, tutorial);
    if frames.is_empty() {
        return Err(GatewayError::EmptySelection {
            version: version.to_string(),
            tutorial,
        });
    }

    let mut transcript = Transcript {
        provider: provider.name().to_string(),
        model: provider.model().to_string(),
        version: version.to_string(),
        tutorial,
        mode,
        entries: Vec::with_capacity(frames.len()),
        aborted: false,
    };

    let ctx = SessionContext { provider, store, opts, mode, version, tutorial };
    match mode {
        SessionMode::WithHistory => {
            let mut history: Vec<ChatTurn> = Vec::new();
            for frame in frames {
                let image = manifest.image_path(frame);
                let turns = build_prompt(frame, &image, mode, &history);
                let result = query_frame(&ctx, frame, &turns);
                match result {
                    FrameResult::Failed { frame_id, prompt_hash, detail } => {
                        transcript.entries.push(TranscriptEntry {
                            frame_id,
                            prompt_hash,
                            raw: String::new(),
                            answers: Vec::new(),
                            status: EntryStatus::AskFailed { detail },
                            created_at: crate::report::timestamp(),
                            cached: false,
                        });
                        transcript.aborted = true;
                        break;
                    }
                    FrameResult::Answered { record, cached } => {
                        if !cached {
                            store.insert(record.clone())?;
                        }
                        let entry = entry_from_record(&record, cached);
                        let failed = !matches!(entry.status, EntryStatus::Ok);
                        transcript.entries.push(entry);
                        if failed {
                            transcript.aborted = true;
                            break;
                        }
                        history = turns;
                        history.push(ChatTurn::assistant(record.raw));
                    }
                }
            }
        }
        SessionMode::WithoutHistory => {
            let run_one = |frame: &&FrameCase| {
                let image = manifest.image_path(frame);
                let turns = build_prompt(frame, &image, mode, &[]);
                query_frame(&ctx, frame, &turns)
            };
            let results: Vec<FrameResult> = if opts.jobs > 1 {
                use rayon::prelude::*;
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(opts.jobs)
                    .build()
                    .map_err(|e| GatewayError::Config(e.to_string()))?;
                pool.install(|| frames.par_iter().map(&run_one).collect())
            } else {
                frames.iter().map(run_one).collect()
            };

            // inserts happen in ordinal order so store files stay deterministic
            for result in results {
                match result {
                    FrameResult::Answered { record, cached } => {
                        if !cached {
                            store.insert(record.clone())?;
                        }
                        transcript.entries.push(entry_from_record(&record, cached));
                    }
                    FrameResult::Failed { frame_id, prompt_hash, detail } => {
                        transcript.entries.push(TranscriptEntry {
                            frame_id,
                            prompt_hash,
                            raw: String::new(),
                            answers: Vec::new(),
                            status: EntryStatus::AskFailed { detail },
                            created_at: crate::report::timestamp(),
                            cached: false,
                        });
                    }
                }
            }
        }
    }

    Ok(transcript)
}
