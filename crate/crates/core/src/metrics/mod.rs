//! Per-question similarity between expected and actual answers: ROUGE-1/2/L
//! plus an embedding-based semantic score.

mod embed;
mod semantic;

pub use embed::{cosine, EmbeddingProvider, HttpEmbedder, HttpEmbedderConfig, StubEmbedder};
pub use semantic::{semantic_score, SemanticMode, SemanticScore};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("embedding provider {provider} failed: {message}")]
    Provider { provider: String, message: String },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Normalized token sequence: lowercase, no whitespace, no punctuation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn new(tokens: Vec<String>) -> Self {
        TokenSeq(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Lowercases and splits on maximal runs of non-alphanumeric characters.
/// No stemming, no stopword removal.
pub fn tokenize(text: &str) -> TokenSeq {
    TokenSeq(
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    /// Builds the score from clipped-overlap counts. The harmonic mean of
    /// o/c and o/g reduces to 2o/(c+g), which keeps the division exact
    /// against integer-count oracles.
    fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        let precision = if candidate_total == 0 {
            0.0
        } else {
            overlap as f64 / candidate_total as f64
        };
        let recall = if reference_total == 0 {
            0.0
        } else {
            overlap as f64 / reference_total as f64
        };
        let f1 = if overlap == 0 {
            0.0
        } else {
            2.0 * overlap as f64 / (candidate_total + reference_total) as f64
        };
        RougeScore { precision, recall, f1 }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for window in tokens.windows(n) {
        *counts.entry(window).or_insert(0) += 1;
    }
    counts
}

/// ROUGE-N: clipped n-gram multiset overlap between candidate and reference.
pub fn rouge_n(candidate: &TokenSeq, reference: &TokenSeq, n: usize) -> RougeScore {
    assert!(n >= 1, "n-gram order must be at least 1");
    let cand = ngram_counts(candidate.tokens(), n);
    let refr = ngram_counts(reference.tokens(), n);
    let cand_total: usize = cand.values().sum();
    let ref_total: usize = refr.values().sum();
    let overlap: usize = cand
        .iter()
        .filter_map(|(gram, &c)| refr.get(gram).map(|&r| c.min(r)))
        .sum();
    RougeScore::from_counts(overlap, cand_total, ref_total)
}

/// Length of the longest common subsequence, two-row dynamic programming.
pub fn lcs_length(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// ROUGE-L: longest common subsequence relative to both sides.
pub fn rouge_l(candidate: &TokenSeq, reference: &TokenSeq) -> RougeScore {
    let lcs = lcs_length(candidate.tokens(), reference.tokens());
    RougeScore::from_counts(lcs, candidate.len(), reference.len())
}

/// Metric bundle for one (expected, actual) answer pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBundle {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    pub rouge_l: RougeScore,
    pub semantic: SemanticScore,
    /// Set when either side was empty (typically a parse failure scored as
    /// an empty answer). Zero scores with this flag are reported, not hidden.
    pub degenerate: bool,
}

/// Scores one question: ROUGE-1/2/L plus the semantic score.
///
/// An empty actual answer yields all-zero ROUGE and a zero semantic score
/// with the degenerate flag set.
pub fn score_question(
    expected: &str,
    actual: &str,
    provider: &dyn EmbeddingProvider,
    mode: SemanticMode,
) -> Result<ScoreBundle, MetricError> {
    let expected_tokens = tokenize(expected);
    let actual_tokens = tokenize(actual);
    let semantic = semantic_score(actual, expected, provider, mode)?;
    Ok(ScoreBundle {
        rouge1: rouge_n(&actual_tokens, &expected_tokens, 1),
        rouge2: rouge_n(&actual_tokens, &expected_tokens, 2),
        rouge_l: rouge_l(&actual_tokens, &expected_tokens),
        degenerate: semantic.degenerate || actual_tokens.is_empty() || expected_tokens.is_empty(),
        semantic,
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Maps each distinct token to its own orthogonal axis. Cosine between
    /// tokens is exactly 1 for equal tokens and 0 otherwise.
    pub struct OneHotEmbedder {
        axes: std::sync::Mutex<HashMap<String, usize>>,
        dimension: usize,
    }

    impl OneHotEmbedder {
        pub fn new(dimension: usize) -> Self {
            OneHotEmbedder {
                axes: std::sync::Mutex::new(HashMap::new()),
                dimension,
            }
        }
    }

    impl EmbeddingProvider for OneHotEmbedder {
        fn name(&self) -> &str {
            "one-hot"
        }

        fn dimension(&self) -> usize {
            self.dimension
        }

        fn embed_text(&self, text: &str) -> Result<Vec<f64>, MetricError> {
            let mut axes = self.axes.lock().unwrap();
            let next = axes.len();
            let axis = *axes.entry(text.to_string()).or_insert(next);
            assert!(axis < self.dimension, "one-hot embedder ran out of axes");
            let mut v = vec![0.0; self.dimension];
            v[axis] = 1.0;
            Ok(v)
        }
    }
}
