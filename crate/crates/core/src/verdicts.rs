//! The assertion stage: joins corpus expectations with scored answers,
//! applies a classifier, and produces per-question and per-frame test
//! outcomes.

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{
    classify_with_combiner, knn_classify, CalibrationArtifact, CalibrationError, ClassCombiner,
    ClusterModel, FeaturePoint, QualityClass, ThresholdSet,
};
use crate::corpus::CorpusManifest;
use crate::gateway::SessionMode;
use crate::scores::ScoreRow;

#[derive(Debug, Error)]
pub enum VerdictError {
    #[error("no transcript entries for frames: {}", .0.join(", "))]
    CoverageGap(Vec<String>),
    #[error("version {0} not in the corpus")]
    UnknownVersion(String),
    #[error("no frames selected")]
    EmptySelection,
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

/// Test outcome, ordered worst to best and mapped 1:1 from quality classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestOutcome {
    Fail,
    NeedsRevision,
    Pass,
}

impl From<QualityClass> for TestOutcome {
    fn from(class: QualityClass) -> Self {
        match class {
            QualityClass::Low => TestOutcome::Fail,
            QualityClass::Mid => TestOutcome::NeedsRevision,
            QualityClass::High => TestOutcome::Pass,
        }
    }
}

impl std::fmt::Display for TestOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TestOutcome::Fail => "fail",
            TestOutcome::NeedsRevision => "needs-revision",
            TestOutcome::Pass => "pass",
        })
    }
}

/// The configured assertion rule: explainable threshold bands or K-NN over
/// a fitted cluster model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Classifier {
    Thresholds { thresholds: ThresholdSet, combiner: ClassCombiner },
    Knn { model: ClusterModel, k_neighbors: usize },
}

impl Classifier {
    pub fn reference() -> Self {
        Classifier::Thresholds {
            thresholds: ThresholdSet::reference(),
            combiner: ClassCombiner::MostSevere,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Classifier::Thresholds { thresholds, .. } => format!(
                "thresholds r2 {:.4}/{:.4}, bs {:.4}/{:.4}",
                thresholds.r2.lower, thresholds.r2.upper, thresholds.bs.lower, thresholds.bs.upper
            ),
            Classifier::Knn { model, k_neighbors } => {
                format!("k-nn over {} points, k={k_neighbors}", model.points.len())
            }
        }
    }
}

impl From<CalibrationArtifact> for Classifier {
    fn from(artifact: CalibrationArtifact) -> Self {
        match artifact {
            CalibrationArtifact::Thresholds { thresholds, combiner } => {
                Classifier::Thresholds { thresholds, combiner }
            }
            CalibrationArtifact::Clusters { model, k_neighbors } => {
                Classifier::Knn { model, k_neighbors }
            }
        }
    }
}

/// Classifies one scored answer and maps the class to a test outcome.
pub fn assert_case(
    point: &FeaturePoint,
    classifier: &Classifier,
) -> Result<(QualityClass, TestOutcome), VerdictError> {
    let class = match classifier {
        Classifier::Thresholds { thresholds, combiner } => {
            classify_with_combiner(point, thresholds, *combiner)
        }
        Classifier::Knn { model, k_neighbors } => knn_classify(point, model, *k_neighbors)?,
    };
    Ok((class, class.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionVerdict {
    pub question_id: String,
    pub question: String,
    pub expected: String,
    pub actual: String,
    pub rouge2_f1: f64,
    pub semantic_f1: f64,
    pub degenerate: bool,
    pub class: QualityClass,
    pub outcome: TestOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameVerdict {
    pub frame_id: String,
    pub tutorial: u32,
    pub image: PathBuf,
    /// Worst question outcome; one misunderstood rule fails the frame.
    pub outcome: TestOutcome,
    pub questions: Vec<QuestionVerdict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub pass: usize,
    pub needs_revision: usize,
    pub fail: usize,
}

impl OutcomeCounts {
    fn add(&mut self, outcome: TestOutcome) {
        match outcome {
            TestOutcome::Pass => self.pass += 1,
            TestOutcome::NeedsRevision => self.needs_revision += 1,
            TestOutcome::Fail => self.fail += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.pass + self.needs_revision + self.fail
    }
}

/// A failed question with full context for the report gallery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedSample {
    pub frame_id: String,
    pub tutorial: u32,
    pub image: PathBuf,
    pub question: String,
    pub expectation: String,
    pub answer: String,
    pub rouge2_f1: f64,
    pub semantic_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub provider: String,
    pub model: String,
    pub version: String,
    pub mode: SessionMode,
    pub frames: Vec<FrameVerdict>,
    pub question_counts: OutcomeCounts,
    pub frame_counts: OutcomeCounts,
    pub flagged: Vec<FlaggedSample>,
}

/// Which frames a suite covers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub provider: String,
    pub model: String,
    pub version: String,
    pub mode: SessionMode,
    /// Empty means every tutorial of the version.
    pub tutorials: Vec<u32>,
}

/// Joins corpus frames with transcript answers and score rows and produces
/// one verdict per question and per frame. Every selected frame needs a
/// transcript entry and full score coverage; gaps are an error listing the
/// uncovered frames.
pub fn run_suite(
    manifest: &CorpusManifest,
    spec: &SuiteSpec,
    records: &[crate::gateway::StoreRecord],
    scores: &[ScoreRow],
    classifier: &Classifier,
) -> Result<SuiteResult, VerdictError> {
    if manifest.version(&spec.version).is_none() {
        return Err(VerdictError::UnknownVersion(spec.version.clone()));
    }
    let tutorials = if spec.tutorials.is_empty() {
        manifest.tutorials_for(&spec.version)
    } else {
        spec.tutorials.clone()
    };

    let mut answers: HashMap<(&str, &str), &str> = HashMap::new();
    for record in records {
        if record.provider == spec.provider
            && record.model == spec.model
            && record.version == spec.version
            && record.mode == spec.mode
        {
            for answer in &record.answers {
                answers.insert(
                    (record.frame_id.as_str(), answer.question_id.as_str()),
                    answer.actual_answer.as_str(),
                );
            }
        }
    }

    let mut by_question: HashMap<(&str, &str), &ScoreRow> = HashMap::new();
    for row in scores {
        if row.provider == spec.provider
            && row.model == spec.model
            && row.version == spec.version
            && row.mode == spec.mode
        {
            by_question.insert((row.frame_id.as_str(), row.question_id.as_str()), row);
        }
    }

    let mut frames = Vec::new();
    let mut gaps = Vec::new();
    let mut question_counts = OutcomeCounts::default();
    let mut frame_counts = OutcomeCounts::default();
    let mut flagged = Vec::new();

    for &tutorial in &tutorials {
        for frame in manifest.frames_for(&spec.version, tutorial) {
            let mut verdicts = Vec::with_capacity(frame.questions.len());
            let mut covered = true;
            for question in &frame.questions {
                let key = (frame.frame_id.as_str(), question.id.as_str());
                let (Some(row), Some(actual)) = (by_question.get(&key), answers.get(&key)) else {
                    covered = false;
                    break;
                };
                let (class, outcome) = assert_case(&row.feature_point(), classifier)?;
                verdicts.push(QuestionVerdict {
                    question_id: question.id.clone(),
                    question: question.question.clone(),
                    expected: question.expected_answer.clone(),
                    actual: actual.to_string(),
                    rouge2_f1: row.rouge2_f1,
                    semantic_f1: row.semantic_f1,
                    degenerate: row.degenerate,
                    class,
                    outcome,
                });
            }
            if !covered {
                gaps.push(frame.frame_id.clone());
                continue;
            }
            let outcome = verdicts
                .iter()
                .map(|v| v.outcome)
                .min()
                .expect("frames have at least one question");
            for v in &verdicts {
                question_counts.add(v.outcome);
                if v.outcome == TestOutcome::Fail {
                    flagged.push(FlaggedSample {
                        frame_id: frame.frame_id.clone(),
                        tutorial,
                        image: frame.image.clone(),
                        question: v.question.clone(),
                        expectation: v.expected.clone(),
                        answer: v.actual.clone(),
                        rouge2_f1: v.rouge2_f1,
                        semantic_f1: v.semantic_f1,
                    });
                }
            }
            frame_counts.add(outcome);
            frames.push(FrameVerdict {
                frame_id: frame.frame_id.clone(),
                tutorial,
                image: frame.image.clone(),
                outcome,
                questions: verdicts,
            });
        }
    }

    if !gaps.is_empty() {
        return Err(VerdictError::CoverageGap(gaps));
    }
    if frames.is_empty() {
        return Err(VerdictError::EmptySelection);
    }

    Ok(SuiteResult {
        provider: spec.provider.clone(),
        model: spec.model.clone(),
        version: spec.version.clone(),
        mode: spec.mode,
        frames,
        question_counts,
        frame_counts,
        flagged,
    })
}

/// When the gate trips, the process exits non-zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateLevel {
    /// Trip on any failed question.
    #[default]
    Fail,
    /// Trip on any failed or needs-revision question.
    NeedsRevision,
    /// Never trip; reporting only.
    Never,
}

impl std::str::FromStr for GateLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fail" => Ok(GateLevel::Fail),
            "needs-revision" | "revise" => Ok(GateLevel::NeedsRevision),
            "never" | "none" => Ok(GateLevel::Never),
            other => Err(format!("unknown gate level {other:?}")),
        }
    }
}

/// True when the suite results pass the configured gate.
pub fn gate_passes(results: &[SuiteResult], level: GateLevel) -> bool {
    results.iter().all(|r| match level {
        GateLevel::Fail => r.question_counts.fail == 0,
        GateLevel::NeedsRevision => {
            r.question_counts.fail == 0 && r.question_counts.needs_revision == 0
        }
        GateLevel::Never => true,
    })
}
