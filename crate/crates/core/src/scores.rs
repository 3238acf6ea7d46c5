//! The per-question score table: one row per question x model x version x
//! mode, exported as CSV and consumed by the verdict and analysis stages.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::FeaturePoint;
use crate::corpus::CorpusManifest;
use crate::gateway::{SessionMode, StoreRecord};
use crate::metrics::{
    score_question, EmbeddingProvider, MetricError, ScoreBundle, SemanticMode,
};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("transcript references unknown frame {0}")]
    UnknownFrame(String),
    #[error("frame {frame}: transcript references unknown question {question}")]
    UnknownQuestion { frame: String, question: String },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("score table {path}: {message}")]
    Table { path: String, message: String },
}

/// Flat score record; field names are the CSV column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub provider: String,
    pub model: String,
    pub version: String,
    pub mode: SessionMode,
    pub tutorial: u32,
    pub frame_id: String,
    pub question_id: String,
    pub rouge1_precision: f64,
    pub rouge1_recall: f64,
    pub rouge1_f1: f64,
    pub rouge2_precision: f64,
    pub rouge2_recall: f64,
    pub rouge2_f1: f64,
    pub rouge_l_precision: f64,
    pub rouge_l_recall: f64,
    pub rouge_l_f1: f64,
    pub semantic_precision: f64,
    pub semantic_recall: f64,
    pub semantic_f1: f64,
    pub semantic_mode: SemanticMode,
    pub degenerate: bool,
}

impl ScoreRow {
    pub fn from_bundle(
        record: &StoreRecord,
        question_id: &str,
        bundle: &ScoreBundle,
    ) -> Self {
        ScoreRow {
            provider: record.provider.clone(),
            model: record.model.clone(),
            version: record.version.clone(),
            mode: record.mode,
            tutorial: record.tutorial,
            frame_id: record.frame_id.clone(),
            question_id: question_id.to_string(),
            rouge1_precision: bundle.rouge1.precision,
            rouge1_recall: bundle.rouge1.recall,
            rouge1_f1: bundle.rouge1.f1,
            rouge2_precision: bundle.rouge2.precision,
            rouge2_recall: bundle.rouge2.recall,
            rouge2_f1: bundle.rouge2.f1,
            rouge_l_precision: bundle.rouge_l.precision,
            rouge_l_recall: bundle.rouge_l.recall,
            rouge_l_f1: bundle.rouge_l.f1,
            semantic_precision: bundle.semantic.precision,
            semantic_recall: bundle.semantic.recall,
            semantic_f1: bundle.semantic.f1,
            semantic_mode: bundle.semantic.mode,
            degenerate: bundle.degenerate,
        }
    }

    /// The (ROUGE-2 f1, semantic f1) pair used by classifiers.
    pub fn feature_point(&self) -> FeaturePoint {
        FeaturePoint {
            r2: self.rouge2_f1,
            bs: self.semantic_f1,
            question_id: self.question_id.clone(),
            model: self.model.clone(),
        }
    }

    /// Mean-able metric f1 values in table order:
    /// rouge1, rouge2, rougeL, semantic.
    pub fn metric_f1s(&self) -> [f64; 4] {
        [self.rouge1_f1, self.rouge2_f1, self.rouge_l_f1, self.semantic_f1]
    }
}

/// Scores every parsed answer of the given transcript records against the
/// corpus expectations. Rows come out in (version, mode, tutorial, frame
/// ordinal, question) order.
pub fn score_store_records(
    manifest: &CorpusManifest,
    records: &[StoreRecord],
    embedder: &dyn EmbeddingProvider,
    semantic_mode: SemanticMode,
) -> Result<Vec<ScoreRow>, ScoreError> {
    let mut rows = Vec::new();
    for record in records {
        let frame = manifest
            .frame(&record.frame_id)
            .ok_or_else(|| ScoreError::UnknownFrame(record.frame_id.clone()))?;
        for answer in &record.answers {
            let expected = frame
                .questions
                .iter()
                .find(|q| q.id == answer.question_id)
                .ok_or_else(|| ScoreError::UnknownQuestion {
                    frame: record.frame_id.clone(),
                    question: answer.question_id.clone(),
                })?;
            let bundle = score_question(
                &expected.expected_answer,
                &answer.actual_answer,
                embedder,
                semantic_mode,
            )?;
            rows.push(ScoreRow::from_bundle(record, &answer.question_id, &bundle));
        }
    }

    let ordinals: HashMap<&str, u32> = manifest
        .frames
        .iter()
        .map(|f| (f.frame_id.as_str(), f.ordinal))
        .collect();
    rows.sort_by(|a, b| {
        let oa = ordinals.get(a.frame_id.as_str()).copied().unwrap_or(0);
        let ob = ordinals.get(b.frame_id.as_str()).copied().unwrap_or(0);
        (&a.provider, &a.model, &a.version, a.mode.as_str(), a.tutorial, oa, &a.question_id).cmp(&(
            &b.provider,
            &b.model,
            &b.version,
            b.mode.as_str(),
            b.tutorial,
            ob,
            &b.question_id,
        ))
    });
    Ok(rows)
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<(), ScoreError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).map_err(|e| ScoreError::Table {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    }
    let bytes = writer.into_inner().map_err(|e| ScoreError::Table {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    crate::report::write_atomic(path, &bytes).map_err(|e| ScoreError::Table {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>, ScoreError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| ScoreError::Table {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e| ScoreError::Table {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::test_support::{mock_config, three_frame_manifest};
    use crate::gateway::{
        run_tutorial, MockProvider, ProviderKind, RunOptions, TranscriptStore,
    };
    use crate::metrics::StubEmbedder;
    use tempfile::TempDir;

    fn oracle_rows() -> Vec<ScoreRow> {
        let manifest = three_frame_manifest();
        let dir = TempDir::new().unwrap();
        let store = TranscriptStore::open(dir.path()).unwrap();
        let config = mock_config("mock", ProviderKind::MockOracle);
        let provider = MockProvider::oracle(&config, &manifest);
        run_tutorial(&manifest, "L", 1, SessionMode::WithoutHistory, &provider, &store, &RunOptions::default()).unwrap();
        let records = store.select("mock", "mock-v1", "L", SessionMode::WithoutHistory);
        score_store_records(&manifest, &records, &StubEmbedder::default(), SemanticMode::Sentence)
            .unwrap()
    }

    #[test]
    fn oracle_answers_score_perfect() {
        let rows = oracle_rows();
        assert_eq!(rows.len(), 4);
        for row in &rows {
            assert_eq!(row.rouge1_f1, 1.0, "{}", row.question_id);
            assert_eq!(row.rouge_l_f1, 1.0);
            assert!((row.semantic_f1 - 1.0).abs() < 1e-9);
            assert!(!row.degenerate);
        }
    }

    #[test]
    fn rows_are_ordered_by_frame_ordinal() {
        let rows = oracle_rows();
        let ids: Vec<&str> = rows.iter().map(|r| r.question_id.as_str()).collect();
        assert_eq!(ids, ["q1", "q2", "q3", "q4"]);
    }

    #[test]
    fn csv_round_trip() {
        let rows = oracle_rows();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("scores.csv");
        write_scores(&path, &rows).unwrap();
        let back = read_scores(&path).unwrap();
        assert_eq!(rows, back);
    }

    #[test]
    fn unknown_frame_is_an_error() {
        let manifest = three_frame_manifest();
        let dir = TempDir::new().unwrap();
        let store = TranscriptStore::open(dir.path()).unwrap();
        let config = mock_config("mock", ProviderKind::MockOracle);
        let provider = MockProvider::oracle(&config, &manifest);
        run_tutorial(&manifest, "L", 1, SessionMode::WithoutHistory, &provider, &store, &RunOptions::default()).unwrap();
        let mut records = store.select("mock", "mock-v1", "L", SessionMode::WithoutHistory);
        records[0].frame_id = "ghost".into();
        let err = score_store_records(&manifest, &records, &StubEmbedder::default(), SemanticMode::Sentence)
            .unwrap_err();
        assert!(matches!(err, ScoreError::UnknownFrame(f) if f == "ghost"));
    }
}
