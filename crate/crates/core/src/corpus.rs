//! Annotated tutorial corpus: frames, question/answer pairs, version linkage.
//!
//! The corpus is a single TOML manifest with top-level `versions`, `frames`
//! and `metadata` keys. Image files are referenced by paths relative to the
//! manifest location and are only checked for existence here; decoding is
//! the gateway's concern.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("manifest serialization failed: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid corpus: {0}")]
    Validation(Diagnostic),
    #[error("unknown version {0:?}")]
    UnknownVersion(String),
}

/// A single validation finding with enough context to locate the culprit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub frame_id: Option<String>,
    pub question_id: Option<String>,
    pub message: String,
}

impl Diagnostic {
    fn corpus(message: impl Into<String>) -> Self {
        Diagnostic {
            frame_id: None,
            question_id: None,
            message: message.into(),
        }
    }

    fn frame(frame_id: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            frame_id: Some(frame_id.to_string()),
            question_id: None,
            message: message.into(),
        }
    }

    fn question(frame_id: &str, question_id: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            frame_id: Some(frame_id.to_string()),
            question_id: Some(question_id.to_string()),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.frame_id, &self.question_id) {
            (Some(fr), Some(q)) => write!(f, "frame {fr}, question {q}: {}", self.message),
            (Some(fr), None) => write!(f, "frame {fr}: {}", self.message),
            _ => write!(f, "{}", self.message),
        }
    }
}

/// A game build the corpus was annotated against, e.g. `P` or `L`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameVersion {
    pub id: String,
    #[serde(default)]
    pub description: String,
}

/// Developer-authored question with its ground-truth answer.
///
/// `id` is the cross-version linkage key: annotators keep it stable across
/// game revisions even when the question wording changes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub id: String,
    pub question: String,
    pub expected_answer: String,
}

/// One annotated tutorial frame with its ordered question list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameCase {
    pub frame_id: String,
    pub tutorial: u32,
    pub version: String,
    pub image: PathBuf,
    pub ordinal: u32,
    pub questions: Vec<QAPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub versions: Vec<GameVersion>,
    pub frames: Vec<FrameCase>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    /// Directory the manifest was loaded from; image paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// A question present in two versions, paired by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommonQuestion {
    pub question_id: String,
    pub a: QAPair,
    pub b: QAPair,
}

impl CorpusManifest {
    pub fn version(&self, id: &str) -> Option<&GameVersion> {
        self.versions.iter().find(|v| v.id == id)
    }

    pub fn frame(&self, frame_id: &str) -> Option<&FrameCase> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    /// Frames of one (version, tutorial), sorted by ordinal.
    pub fn frames_for(&self, version: &str, tutorial: u32) -> Vec<&FrameCase> {
        let mut frames: Vec<&FrameCase> = self
            .frames
            .iter()
            .filter(|f| f.version == version && f.tutorial == tutorial)
            .collect();
        frames.sort_by_key(|f| f.ordinal);
        frames
    }

    /// Tutorial ids present for a version, ascending.
    pub fn tutorials_for(&self, version: &str) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .frames
            .iter()
            .filter(|f| f.version == version)
            .map(|f| f.tutorial)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Absolute path of a frame's image file.
    pub fn image_path(&self, frame: &FrameCase) -> PathBuf {
        self.base_dir.join(&frame.image)
    }

    /// Looks up (expected answer, tutorial, frame_id) for a question of a version.
    pub fn question(&self, version: &str, question_id: &str) -> Option<(&FrameCase, &QAPair)> {
        self.frames
            .iter()
            .filter(|f| f.version == version)
            .find_map(|f| {
                f.questions
                    .iter()
                    .find(|q| q.id == question_id)
                    .map(|q| (f, q))
            })
    }
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut manifest: CorpusManifest = toml::from_str(&text)?;
    manifest.base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    match validate_corpus(&manifest).into_iter().next() {
        None => Ok(manifest),
        Some(first) => Err(CorpusError::Validation(first)),
    }
}

pub fn save_manifest(manifest: &CorpusManifest, path: &Path) -> Result<(), CorpusError> {
    let text = toml::to_string_pretty(manifest)?;
    crate::report::write_atomic(path, text.as_bytes()).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Checks every corpus invariant and returns one diagnostic per violation.
/// An empty result means the manifest is well-formed.
pub fn validate_corpus(manifest: &CorpusManifest) -> Vec<Diagnostic> {
    let mut diags = Vec::new();

    let mut version_ids = HashSet::new();
    for v in &manifest.versions {
        if v.id.is_empty() {
            diags.push(Diagnostic::corpus("version with empty id"));
        } else if !version_ids.insert(v.id.as_str()) {
            diags.push(Diagnostic::corpus(format!("duplicate version id {:?}", v.id)));
        }
    }

    let mut frame_ids = HashSet::new();
    // (version, tutorial) -> last seen ordinal, in declaration order
    let mut last_ordinal: HashMap<(&str, u32), (u32, &str)> = HashMap::new();
    // (version, question id) -> frame that declared it
    let mut question_ids: HashMap<(&str, &str), &str> = HashMap::new();

    for frame in &manifest.frames {
        let fid = frame.frame_id.as_str();
        if fid.is_empty() {
            diags.push(Diagnostic::corpus("frame with empty frame_id"));
        } else if !frame_ids.insert(fid) {
            diags.push(Diagnostic::frame(fid, "duplicate frame id"));
        }

        if !version_ids.contains(frame.version.as_str()) {
            diags.push(Diagnostic::frame(
                fid,
                format!("unknown version {}", frame.version),
            ));
        }

        let image = manifest.image_path(frame);
        if !image.is_file() {
            diags.push(Diagnostic::frame(
                fid,
                format!("image {} does not exist", image.display()),
            ));
        }

        match last_ordinal.get(&(frame.version.as_str(), frame.tutorial)) {
            Some(&(prev, prev_frame)) if frame.ordinal <= prev => {
                diags.push(Diagnostic::frame(
                    fid,
                    format!(
                        "ordinal {} not strictly greater than {} of frame {}",
                        frame.ordinal, prev, prev_frame
                    ),
                ));
            }
            _ => {
                last_ordinal.insert((frame.version.as_str(), frame.tutorial), (frame.ordinal, fid));
            }
        }

        if frame.questions.is_empty() {
            diags.push(Diagnostic::frame(fid, "frame has no questions"));
        }
        for q in &frame.questions {
            if q.id.is_empty() {
                diags.push(Diagnostic::frame(fid, "question with empty id"));
                continue;
            }
            if let Some(other) = question_ids.insert((frame.version.as_str(), q.id.as_str()), fid)
            {
                diags.push(Diagnostic::question(
                    fid,
                    &q.id,
                    format!("duplicate question id within version {} (also in frame {})", frame.version, other),
                ));
            }
            if q.question.is_empty() {
                diags.push(Diagnostic::question(fid, &q.id, "empty question text"));
            }
            if q.expected_answer.is_empty() {
                diags.push(Diagnostic::question(fid, &q.id, "empty expected answer"));
            }
        }
    }

    diags
}

/// Question ids present in both versions, paired side by side.
///
/// Ordering is deterministic: by the first version's (tutorial, ordinal,
/// question id). The id is the linkage key; question wording may differ.
pub fn common_questions(
    manifest: &CorpusManifest,
    version_a: &str,
    version_b: &str,
) -> Result<Vec<CommonQuestion>, CorpusError> {
    for v in [version_a, version_b] {
        if manifest.version(v).is_none() {
            return Err(CorpusError::UnknownVersion(v.to_string()));
        }
    }

    let mut b_side: HashMap<&str, &QAPair> = HashMap::new();
    for frame in manifest.frames.iter().filter(|f| f.version == version_b) {
        for q in &frame.questions {
            b_side.insert(q.id.as_str(), q);
        }
    }

    let mut ordered: Vec<(&FrameCase, &QAPair)> = Vec::new();
    for frame in manifest.frames.iter().filter(|f| f.version == version_a) {
        for q in &frame.questions {
            if b_side.contains_key(q.id.as_str()) {
                ordered.push((frame, q));
            }
        }
    }
    ordered.sort_by(|(fa, qa), (fb, qb)| {
        (fa.tutorial, fa.ordinal, qa.id.as_str()).cmp(&(fb.tutorial, fb.ordinal, qb.id.as_str()))
    });

    Ok(ordered
        .into_iter()
        .map(|(_, qa)| CommonQuestion {
            question_id: qa.id.clone(),
            a: qa.clone(),
            b: (*b_side[qa.id.as_str()]).clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;
    use tempfile::TempDir;

    fn qa(id: &str, question: &str, answer: &str) -> QAPair {
        QAPair {
            id: id.to_string(),
            question: question.to_string(),
            expected_answer: answer.to_string(),
        }
    }

    fn frame(id: &str, tutorial: u32, version: &str, ordinal: u32, questions: Vec<QAPair>) -> FrameCase {
        FrameCase {
            frame_id: id.to_string(),
            tutorial,
            version: version.to_string(),
            image: PathBuf::from(format!("{id}.png")),
            ordinal,
            questions,
        }
    }

    /// Writes a manifest plus dummy image files into a tempdir.
    fn materialize(manifest: &CorpusManifest, dir: &TempDir) -> PathBuf {
        for f in &manifest.frames {
            fs::write(dir.path().join(&f.image), b"png").unwrap();
        }
        let path = dir.path().join("corpus.toml");
        save_manifest(manifest, &path).unwrap();
        path
    }

    fn two_version_manifest() -> CorpusManifest {
        CorpusManifest {
            versions: vec![
                GameVersion { id: "P".into(), description: "previous".into() },
                GameVersion { id: "L".into(), description: "latest".into() },
            ],
            frames: vec![
                frame("P-1", 1, "P", 1, vec![qa("q1", "What is the Treasure?", "The cheese."), qa("q2", "Who attacks?", "The rats.")]),
                frame("P-2", 2, "P", 1, vec![qa("q3", "What distracts cats?", "Events.")]),
                frame("L-1", 1, "L", 1, vec![qa("q1", "What is the Treasure now?", "The cheese to protect.")]),
                frame("L-2", 2, "L", 1, vec![qa("q4", "What tools exist?", "Attraction tools.")]),
            ],
            metadata: BTreeMap::from([("game".to_string(), "tower defense".to_string())]),
            base_dir: PathBuf::new(),
        }
    }

    #[test]
    fn loads_minimal_manifest() {
        let dir = TempDir::new().unwrap();
        let manifest = CorpusManifest {
            versions: vec![GameVersion { id: "L".into(), description: String::new() }],
            frames: vec![frame("f1", 1, "L", 1, vec![
                qa("q1", "What?", "This."),
                qa("q2", "Where?", "There."),
            ])],
            metadata: BTreeMap::new(),
            base_dir: PathBuf::new(),
        };
        let path = materialize(&manifest, &dir);
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.frames.len(), 1);
        assert_eq!(loaded.frames[0].questions.len(), 2);
        assert_eq!(loaded.base_dir, dir.path());
    }

    #[test]
    fn dangling_version_reference_fails() {
        let dir = TempDir::new().unwrap();
        let mut manifest = two_version_manifest();
        manifest.frames[0].version = "X".into();
        let path = materialize(&manifest, &dir);
        let err = load_manifest(&path).unwrap_err();
        match err {
            CorpusError::Validation(d) => assert!(d.message.contains("unknown version X"), "{d}"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn malformed_file_is_a_parse_error() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("corpus.toml");
        fs::write(&path, "versions = [ {").unwrap();
        assert!(matches!(load_manifest(&path), Err(CorpusError::Parse(_))));
    }

    #[test]
    fn validate_reports_empty_question_list() {
        let mut manifest = two_version_manifest();
        manifest.frames[1].questions.clear();
        let diags = validate_corpus(&manifest);
        assert!(diags
            .iter()
            .any(|d| d.frame_id.as_deref() == Some("P-2") && d.message.contains("no questions")));
    }

    #[test]
    fn validate_reports_duplicate_frame_id() {
        let mut manifest = two_version_manifest();
        manifest.frames[1].frame_id = "P-1".into();
        let diags = validate_corpus(&manifest);
        assert!(diags.iter().any(|d| d.message.contains("duplicate frame id")));
    }

    #[test]
    fn validate_reports_missing_image() {
        let dir = TempDir::new().unwrap();
        let manifest = two_version_manifest();
        let path = materialize(&manifest, &dir);
        let mut loaded = load_manifest(&path).unwrap();
        fs::remove_file(dir.path().join("P-1.png")).unwrap();
        loaded.base_dir = dir.path().to_path_buf();
        let diags = validate_corpus(&loaded);
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains("does not exist"));
    }

    #[test]
    fn validate_reports_non_increasing_ordinal() {
        let mut manifest = two_version_manifest();
        manifest.frames.push(frame("P-3", 1, "P", 1, vec![qa("q9", "Q?", "A.")]));
        let diags = validate_corpus(&manifest);
        assert!(diags.iter().any(|d| d.message.contains("ordinal")));
    }

    #[test]
    fn common_questions_intersects_by_id() {
        let manifest = two_version_manifest();
        let common = common_questions(&manifest, "P", "L").unwrap();
        assert_eq!(common.len(), 1);
        assert_eq!(common[0].question_id, "q1");
        // wording differs between versions, the id is the link
        assert_ne!(common[0].a.question, common[0].b.question);
    }

    #[test]
    fn common_questions_identity_and_disjoint() {
        let manifest = two_version_manifest();
        let same = common_questions(&manifest, "P", "P").unwrap();
        assert_eq!(same.len(), 3);

        let mut disjoint = two_version_manifest();
        disjoint.frames[0].questions = vec![qa("p-only", "Q?", "A.")];
        disjoint.frames[1].questions = vec![qa("p-only-2", "Q?", "A.")];
        assert!(common_questions(&disjoint, "P", "L").unwrap().is_empty());
    }

    #[test]
    fn common_questions_symmetric_up_to_swap() {
        let manifest = two_version_manifest();
        let ab = common_questions(&manifest, "P", "L").unwrap();
        let ba = common_questions(&manifest, "L", "P").unwrap();
        assert_eq!(ab.len(), ba.len());
        for pair in &ab {
            let mirrored = ba.iter().find(|p| p.question_id == pair.question_id).unwrap();
            assert_eq!(pair.a, mirrored.b);
            assert_eq!(pair.b, mirrored.a);
        }
    }

    #[test]
    fn unknown_version_is_an_error() {
        let manifest = two_version_manifest();
        assert!(matches!(
            common_questions(&manifest, "P", "Z"),
            Err(CorpusError::UnknownVersion(v)) if v == "Z"
        ));
    }

    #[test]
    fn save_load_round_trip_preserves_content() {
        let dir = TempDir::new().unwrap();
        let manifest = two_version_manifest();
        let path = materialize(&manifest, &dir);
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.versions, manifest.versions);
        assert_eq!(loaded.frames, manifest.frames);
        assert_eq!(loaded.metadata, manifest.metadata);
    }
}
