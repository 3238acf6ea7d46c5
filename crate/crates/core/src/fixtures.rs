//! Reference data shipped with the tool: published aggregate tables for
//! regression checks, reference bad samples for tokenizer calibration.

use serde::Deserialize;

use crate::analysis::{MetricKey, MetricTable};
use crate::gateway::SessionMode;
use crate::metrics::{rouge_n, tokenize};

pub const VERSION_COMPARISON_DATA: &str = include_str!("../data/version_comparison_reference.csv");
pub const TUTORIAL_MEANS_DATA: &str = include_str!("../data/tutorial_means_reference.csv");
pub const REFERENCE_SAMPLES_DATA: &str = include_str!("../data/reference_samples.toml");

#[derive(Debug, Deserialize)]
struct ComparisonRow {
    mode: SessionMode,
    model: String,
    version: String,
    rouge1: f64,
    rouge2: f64,
    rouge_l: f64,
    bert_score: f64,
}

/// Published per-model metric means for versions P and L in both modes.
pub fn reference_metric_table() -> MetricTable {
    let mut table = MetricTable::default();
    let mut reader = csv::Reader::from_reader(VERSION_COMPARISON_DATA.as_bytes());
    for row in reader.deserialize::<ComparisonRow>() {
        let row = row.expect("shipped comparison data is well-formed");
        table.rows.insert(
            MetricKey { model: row.model, version: row.version, mode: row.mode },
            [row.rouge1, row.rouge2, row.rouge_l, row.bert_score],
        );
    }
    table
}

#[derive(Debug, Deserialize)]
struct TutorialMeansRow {
    tutorial: u32,
    rouge1: f64,
    rouge2: f64,
    rouge_l: f64,
    bert_score: f64,
}

/// Published per-tutorial metric means pooled over models.
pub fn reference_tutorial_means() -> Vec<(u32, [f64; 4])> {
    let mut reader = csv::Reader::from_reader(TUTORIAL_MEANS_DATA.as_bytes());
    reader
        .deserialize::<TutorialMeansRow>()
        .map(|row| {
            let row = row.expect("shipped tutorial data is well-formed");
            (row.tutorial, [row.rouge1, row.rouge2, row.rouge_l, row.bert_score])
        })
        .collect()
}

/// A published low-quality sample: question, expectation, model answer, and
/// the reported scores.
#[derive(Debug, Clone, Deserialize)]
pub struct ReferenceSample {
    pub id: String,
    pub question: String,
    pub expectation: String,
    pub answer: String,
    pub rouge2: f64,
    pub bert_score: f64,
}

#[derive(Deserialize)]
struct ReferenceSamplesFile {
    samples: Vec<ReferenceSample>,
}

pub fn reference_samples() -> Vec<ReferenceSample> {
    let file: ReferenceSamplesFile =
        toml::from_str(REFERENCE_SAMPLES_DATA).expect("shipped samples are well-formed");
    file.samples
}

/// A reference sample whose recomputed ROUGE-2 drifted from the published
/// value; signals a tokenization difference rather than a silent pass.
#[derive(Debug, Clone)]
pub struct TokenizationDelta {
    pub sample_id: String,
    pub computed_rouge2: f64,
    pub published_rouge2: f64,
    pub delta: f64,
    pub note: String,
}

impl std::fmt::Display for TokenizationDelta {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "sample {}: recomputed ROUGE-2 {:.4} vs published {:.4} (delta {:+.4}). {}",
            self.sample_id, self.computed_rouge2, self.published_rouge2, self.delta, self.note
        )
    }
}

/// Recomputes ROUGE-2 for every reference sample under the default
/// tokenizer and reports any drift beyond `tolerance`. An empty result
/// means the tokenizer reproduces the published scores.
pub fn tokenization_spot_check(tolerance: f64) -> Vec<TokenizationDelta> {
    reference_samples()
        .into_iter()
        .filter_map(|sample| {
            let computed =
                rouge_n(&tokenize(&sample.answer), &tokenize(&sample.expectation), 2).f1;
            let delta = computed - sample.rouge2;
            (delta.abs() > tolerance).then(|| TokenizationDelta {
                sample_id: sample.id,
                computed_rouge2: computed,
                published_rouge2: sample.rouge2,
                delta,
                note: "default tokenizer lowercases and splits on non-alphanumeric runs; \
                       the published score was produced by a different tokenization"
                    .to_string(),
            })
        })
        .collect()
}
