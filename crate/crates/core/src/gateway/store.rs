//! Persistent transcript cache: one append-only JSONL file per
//! (provider, version, mode), records keyed by the run cache key.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AnswerRecord, ChatTurn, GatewayError, Role, SessionMode};

/// One cached exchange: the raw model output plus its parsed answers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreRecord {
    pub key: String,
    pub provider: String,
    pub model: String,
    pub version: String,
    pub tutorial: u32,
    pub frame_id: String,
    pub mode: SessionMode,
    pub prompt_hash: String,
    pub raw: String,
    pub answers: Vec<AnswerRecord>,
    /// Marker detail when numbered-answer splitting failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    pub created_at: String,
}

/// Hash of the full prompt content: every turn's role, text and image path.
/// Changing any question text (or the history) changes the hash.
pub fn prompt_hash(turns: &[ChatTurn]) -> String {
    let mut hasher = Sha256::new();
    for turn in turns {
        hasher.update(match turn.role {
            Role::System => b"s",
            Role::User => b"u",
            Role::Assistant => b"a",
        });
        hasher.update([0x1f]);
        hasher.update(turn.text.as_bytes());
        hasher.update([0x1f]);
        if let Some(image) = &turn.image {
            hasher.update(image.to_string_lossy().as_bytes());
        }
        hasher.update([0x1e]);
    }
    hex_digest(hasher)
}

/// Cache key: pure function of the request coordinates and prompt content.
pub fn cache_key(
    provider: &str,
    model: &str,
    mode: SessionMode,
    version: &str,
    tutorial: u32,
    frame_id: &str,
    prompt_hash: &str,
) -> String {
    let mut hasher = Sha256::new();
    for part in [
        provider,
        model,
        mode.as_str(),
        version,
        &tutorial.to_string(),
        frame_id,
        prompt_hash,
    ] {
        hasher.update(part.as_bytes());
        hasher.update([0x1f]);
    }
    hex_digest(hasher)
}

fn hex_digest(hasher: Sha256) -> String {
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn sanitize(component: &str) -> String {
    component
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect()
}

pub struct TranscriptStore {
    dir: PathBuf,
    records: Mutex<HashMap<String, StoreRecord>>,
}

impl TranscriptStore {
    /// Opens (or creates) a store directory and loads every record file.
    pub fn open(dir: &Path) -> Result<Self, GatewayError> {
        std::fs::create_dir_all(dir).map_err(|e| GatewayError::Store(e.to_string()))?;
        let mut records = HashMap::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| GatewayError::Store(e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
            .collect();
        entries.sort();
        for path in entries {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| GatewayError::Store(format!("{}: {e}", path.display())))?;
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: StoreRecord = serde_json::from_str(line).map_err(|e| {
                    GatewayError::Store(format!("{}:{}: {e}", path.display(), lineno + 1))
                })?;
                records.insert(record.key.clone(), record);
            }
        }
        Ok(TranscriptStore {
            dir: dir.to_path_buf(),
            records: Mutex::new(records),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, key: &str) -> Option<StoreRecord> {
        self.records.lock().unwrap().get(key).cloned()
    }

    /// Every record, ordered by (provider, model, version, mode, tutorial,
    /// frame id).
    pub fn all_records(&self) -> Vec<StoreRecord> {
        let records = self.records.lock().unwrap();
        let mut all: Vec<StoreRecord> = records.values().cloned().collect();
        all.sort_by(|a, b| {
            (&a.provider, &a.model, &a.version, a.mode.as_str(), a.tutorial, &a.frame_id).cmp(&(
                &b.provider,
                &b.model,
                &b.version,
                b.mode.as_str(),
                b.tutorial,
                &b.frame_id,
            ))
        });
        all
    }

    /// All records for one (provider, model, version, mode) selection,
    /// ordered by (tutorial, frame id) for deterministic downstream joins.
    pub fn select(
        &self,
        provider: &str,
        model: &str,
        version: &str,
        mode: SessionMode,
    ) -> Vec<StoreRecord> {
        let records = self.records.lock().unwrap();
        let mut hits: Vec<StoreRecord> = records
            .values()
            .filter(|r| {
                r.provider == provider && r.model == model && r.version == version && r.mode == mode
            })
            .cloned()
            .collect();
        hits.sort_by(|a, b| (a.tutorial, &a.frame_id).cmp(&(b.tutorial, &b.frame_id)));
        hits
    }

    fn file_for(&self, provider: &str, version: &str, mode: SessionMode) -> PathBuf {
        self.dir.join(format!(
            "{}__{}__{}.jsonl",
            sanitize(provider),
            sanitize(version),
            mode.as_str()
        ))
    }

    /// Appends one record; the in-memory index and file stay in sync.
    /// Writes are serialized, satisfying the single-writer contract.
    pub fn insert(&self, record: StoreRecord) -> Result<(), GatewayError> {
        let mut records = self.records.lock().unwrap();
        let path = self.file_for(&record.provider, &record.version, record.mode);
        let line = serde_json::to_string(&record).map_err(|e| GatewayError::Store(e.to_string()))?;
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| GatewayError::Store(format!("{}: {e}", path.display())))?;
        writeln!(file, "{line}").map_err(|e| GatewayError::Store(e.to_string()))?;
        records.insert(record.key.clone(), record);
        Ok(())
    }
}
