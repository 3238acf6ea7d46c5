//! Aggregate analyses over the score table: cross-version comparison on
//! common questions, per-tutorial clarity means with ranking, and
//! inter-model agreement via Spearman rank correlation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{common_questions, CorpusError, CorpusManifest};
use crate::gateway::SessionMode;
use crate::scores::ScoreRow;

pub const METRIC_NAMES: [&str; 4] = ["rouge1", "rouge2", "rouge_l", "bert_score"];

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("length mismatch: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("need at least two observations, got {0}")]
    TooShort(usize),
    #[error("constant input on the {0} side")]
    ConstantInput(&'static str),
    #[error("no common questions between {a} and {b}")]
    EmptyCommonSet { a: String, b: String },
    #[error("model {model} version {version}: missing scores for questions {missing:?}")]
    MissingScores { model: String, version: String, missing: Vec<String> },
    #[error("zero baseline for model {model} metric {metric}")]
    ZeroBaseline { model: String, metric: String },
    #[error("need at least two models, got {0}")]
    TooFewModels(usize),
    #[error("models disagree on the question set: {0}")]
    MisalignedQuestions(String),
    #[error("no scores to aggregate")]
    EmptyScores,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

// ---------------------------------------------------------------------------
// Spearman rank correlation
// ---------------------------------------------------------------------------

/// 1-based ranks with ties sharing their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j hold equal values; average the ranks i+1..=j+1
        let rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 {
        return Err(AnalysisError::ConstantInput("first"));
    }
    if vy == 0.0 {
        return Err(AnalysisError::ConstantInput("second"));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Spearman rank correlation: average ranks for ties, then Pearson on the
/// rank vectors.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch { x: x.len(), y: y.len() });
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooShort(x.len()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

// ---------------------------------------------------------------------------
// Version comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MetricKey {
    pub model: String,
    pub version: String,
    pub mode: SessionMode,
}

/// Mean metric values keyed by (model, version, mode). Rows being compared
/// must aggregate identical question sets.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: BTreeMap<MetricKey, [f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub model: String,
    pub metric: String,
    pub value_previous: f64,
    pub value_latest: f64,
    pub delta: f64,
    /// Relative improvement (latest - previous) / previous * 100.
    pub improvement_pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VersionComparison {
    pub mode: SessionMode,
    pub version_previous: String,
    pub version_latest: String,
    pub common_question_count: Option<usize>,
    pub cells: Vec<ComparisonCell>,
    pub min_improvement: ComparisonCell,
    pub max_improvement: ComparisonCell,
}

/// Diffs two versions of an already-aggregated metric table for one mode.
pub fn version_comparison_from_table(
    table: &MetricTable,
    mode: SessionMode,
    previous: &str,
    latest: &str,
) -> Result<VersionComparison, AnalysisError> {
    let mut cells = Vec::new();
    for (key, prev_means) in &table.rows {
        if key.mode != mode || key.version != previous {
            continue;
        }
        let latest_key = MetricKey {
            model: key.model.clone(),
            version: latest.to_string(),
            mode,
        };
        let Some(latest_means) = table.rows.get(&latest_key) else {
            continue;
        };
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            let p = prev_means[i];
            let l = latest_means[i];
            let improvement_pct = if p == 0.0 {
                if l == 0.0 {
                    0.0
                } else {
                    return Err(AnalysisError::ZeroBaseline {
                        model: key.model.clone(),
                        metric: name.to_string(),
                    });
                }
            } else {
                (l - p) / p * 100.0
            };
            cells.push(ComparisonCell {
                model: key.model.clone(),
                metric: name.to_string(),
                value_previous: p,
                value_latest: l,
                delta: l - p,
                improvement_pct,
            });
        }
    }
    if cells.is_empty() {
        return Err(AnalysisError::EmptyCommonSet {
            a: previous.to_string(),
            b: latest.to_string(),
        });
    }
    let min_improvement = cells
        .iter()
        .min_by(|a, b| a.improvement_pct.partial_cmp(&b.improvement_pct).unwrap())
        .unwrap()
        .clone();
    let max_improvement = cells
        .iter()
        .max_by(|a, b| a.improvement_pct.partial_cmp(&b.improvement_pct).unwrap())
        .unwrap()
        .clone();
    Ok(VersionComparison {
        mode,
        version_previous: previous.to_string(),
        version_latest: latest.to_string(),
        common_question_count: None,
        cells,
        min_improvement,
        max_improvement,
    })
}

/// Per-model per-metric means over the common questions of two versions,
/// then relative improvements. Every model must cover the full common set
/// in both versions.
pub fn compare_versions(
    scores: &[ScoreRow],
    manifest: &CorpusManifest,
    mode: SessionMode,
    previous: &str,
    latest: &str,
) -> Result<VersionComparison, AnalysisError> {
    let common: BTreeSet<String> = common_questions(manifest, previous, latest)?
        .into_iter()
        .map(|c| c.question_id)
        .collect();
    if common.is_empty() {
        return Err(AnalysisError::EmptyCommonSet {
            a: previous.to_string(),
            b: latest.to_string(),
        });
    }

    // (model, version) -> question -> metric sums
    let mut sums: BTreeMap<(String, String), BTreeMap<String, [f64; 4]>> = BTreeMap::new();
    for row in scores {
        if row.mode != mode
            || !common.contains(&row.question_id)
            || (row.version != previous && row.version != latest)
        {
            continue;
        }
        sums.entry((row.model.clone(), row.version.clone()))
            .or_default()
            .insert(row.question_id.clone(), row.metric_f1s());
    }

    let mut table = MetricTable::default();
    for ((model, version), by_question) in &sums {
        let missing: Vec<String> = common
            .iter()
            .filter(|q| !by_question.contains_key(*q))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(AnalysisError::MissingScores {
                model: model.clone(),
                version: version.clone(),
                missing,
            });
        }
        let mut means = [0.0; 4];
        for values in by_question.values() {
            for (m, v) in means.iter_mut().zip(values) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= by_question.len() as f64;
        }
        table.rows.insert(
            MetricKey { model: model.clone(), version: version.clone(), mode },
            means,
        );
    }

    let mut comparison = version_comparison_from_table(&table, mode, previous, latest)?;
    comparison.common_question_count = Some(common.len());
    Ok(comparison)
}

// ---------------------------------------------------------------------------
// Tutorial clarity means
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TutorialRow {
    pub tutorial: u32,
    /// Mean per metric, order as in `METRIC_NAMES`.
    pub means: [f64; 4],
    /// Rank per metric, 1 = best; ties share their average rank.
    pub ranks: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TutorialSummary {
    pub rows: Vec<TutorialRow>,
}

impl TutorialSummary {
    pub fn row(&self, tutorial: u32) -> Option<&TutorialRow> {
        self.rows.iter().find(|r| r.tutorial == tutorial)
    }
}

/// Ranks tutorials from already-aggregated per-tutorial means.
pub fn tutorial_summary_from_means(means: &[(u32, [f64; 4])]) -> TutorialSummary {
    let mut rows: Vec<TutorialRow> = means
        .iter()
        .map(|(tutorial, m)| TutorialRow { tutorial: *tutorial, means: *m, ranks: [0.0; 4] })
        .collect();
    rows.sort_by_key(|r| r.tutorial);
    for metric in 0..4 {
        // rank on negated means so rank 1 is the highest mean
        let negated: Vec<f64> = rows.iter().map(|r| -r.means[metric]).collect();
        let ranks = average_ranks(&negated);
        for (row, rank) in rows.iter_mut().zip(ranks) {
            row.ranks[metric] = rank;
        }
    }
    TutorialSummary { rows }
}

/// Unweighted mean over all (question, model) scores per tutorial and
/// metric, ranked per metric descending.
pub fn tutorial_means(scores: &[ScoreRow]) -> Result<TutorialSummary, AnalysisError> {
    if scores.is_empty() {
        return Err(AnalysisError::EmptyScores);
    }
    let mut sums: BTreeMap<u32, ([f64; 4], usize)> = BTreeMap::new();
    for row in scores {
        let entry = sums.entry(row.tutorial).or_insert(([0.0; 4], 0));
        for (s, v) in entry.0.iter_mut().zip(row.metric_f1s()) {
            *s += v;
        }
        entry.1 += 1;
    }
    let means: Vec<(u32, [f64; 4])> = sums
        .into_iter()
        .map(|(tutorial, (sum, count))| {
            let mut mean = sum;
            for m in &mut mean {
                *m /= count as f64;
            }
            (tutorial, mean)
        })
        .collect();
    Ok(tutorial_summary_from_means(&means))
}

// ---------------------------------------------------------------------------
// Model agreement
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub models: Vec<String>,
    /// values[i][j] = mean Spearman correlation across the four metrics
    /// between models i and j. Symmetric with unit diagonal.
    pub values: Vec<Vec<f64>>,
}

impl AgreementMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.models.iter().position(|m| m == a)?;
        let j = self.models.iter().position(|m| m == b)?;
        Some(self.values[i][j])
    }
}

/// Mean Spearman correlation across metrics for every model pair, aligned
/// by question. The join is strict: every model must score the same
/// questions.
pub fn model_agreement(scores: &[ScoreRow]) -> Result<AgreementMatrix, AnalysisError> {
    // model -> question key -> metric f1s
    type QuestionKey = (String, SessionMode, String);
    let mut by_model: BTreeMap<String, BTreeMap<QuestionKey, [f64; 4]>> = BTreeMap::new();
    for row in scores {
        by_model
            .entry(row.model.clone())
            .or_default()
            .insert(
                (row.version.clone(), row.mode, row.question_id.clone()),
                row.metric_f1s(),
            );
    }
    if by_model.len() < 2 {
        return Err(AnalysisError::TooFewModels(by_model.len()));
    }

    let models: Vec<String> = by_model.keys().cloned().collect();
    let reference_keys: Vec<&QuestionKey> = by_model[&models[0]].keys().collect();
    for model in &models[1..] {
        let keys: Vec<&QuestionKey> = by_model[model].keys().collect();
        if keys != reference_keys {
            let missing: Vec<String> = reference_keys
                .iter()
                .filter(|k| !by_model[model].contains_key(**k))
                .map(|k| format!("{}:{}:{}", k.0, k.1, k.2))
                .chain(
                    keys.iter()
                        .filter(|k| !by_model[&models[0]].contains_key(**k))
                        .map(|k| format!("extra {}:{}:{}", k.0, k.1, k.2)),
                )
                .collect();
            return Err(AnalysisError::MisalignedQuestions(format!(
                "{} vs {}: {}",
                models[0],
                model,
                missing.join(", ")
            )));
        }
    }

    let mut values = vec![vec![1.0; models.len()]; models.len()];
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            let left = &by_model[&models[i]];
            let right = &by_model[&models[j]];
            let mut total = 0.0;
            for metric in 0..METRIC_NAMES.len() {
                let x: Vec<f64> = reference_keys.iter().map(|k| left[*k][metric]).collect();
                let y: Vec<f64> = reference_keys.iter().map(|k| right[*k][metric]).collect();
                total += spearman(&x, &y)?;
            }
            let mean = total / METRIC_NAMES.len() as f64;
            values[i][j] = mean;
            values[j][i] = mean;
        }
    }
    Ok(AgreementMatrix { models, values })
}
