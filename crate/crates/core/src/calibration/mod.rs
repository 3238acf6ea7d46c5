//! Quality-class boundaries derived from score distributions: K-Means
//! clustering with K-NN classification, and per-feature multi-Otsu
//! thresholds.

mod otsu;

pub use otsu::multi_otsu;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("need at least {need} points, got {have}")]
    TooFewPoints { have: usize, need: usize },
    #[error("degenerate input: fewer than {k} distinct points")]
    Degenerate { k: usize },
    #[error("unsupported cluster count {0}; quality classes need 2 or 3")]
    InvalidK(usize),
    #[error("constant input: all values equal")]
    ConstantInput,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("model has no training points")]
    UntrainedModel,
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("calibration file {path}: {message}")]
    File { path: String, message: String },
}

/// (ROUGE-2 f1, semantic score) for one scored answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePoint {
    pub r2: f64,
    pub bs: f64,
    pub question_id: String,
    pub model: String,
}

impl FeaturePoint {
    pub fn new(r2: f64, bs: f64) -> Self {
        FeaturePoint { r2, bs, question_id: String::new(), model: String::new() }
    }

    fn coords(&self) -> [f64; 2] {
        [self.r2, self.bs]
    }
}

/// Three-level quality label, ordered from worst to best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QualityClass {
    Low,
    Mid,
    High,
}

impl std::fmt::Display for QualityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            QualityClass::Low => "low",
            QualityClass::Mid => "mid",
            QualityClass::High => "high",
        })
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

// ---------------------------------------------------------------------------
// K-Means + K-NN
// ---------------------------------------------------------------------------

/// Fitted clustering over (r2, bs) feature points. Training points are
/// retained so the model doubles as a K-NN classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub seed: u64,
    pub centroids: Vec<[f64; 2]>,
    /// Quality class per centroid index; ascending centroid coordinate sum
    /// maps to ascending class (both features are higher-is-better).
    pub centroid_classes: Vec<QualityClass>,
    pub points: Vec<FeaturePoint>,
    /// Centroid index per training point.
    pub assignments: Vec<usize>,
    /// Total within-cluster variance after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn class_of(&self, point_index: usize) -> QualityClass {
        self.centroid_classes[self.assignments[point_index]]
    }
}

/// Seeded k-means++ initialization.
fn init_centroids(coords: &[[f64; 2]], k: usize, rng: &mut ChaCha20Rng) -> Vec<[f64; 2]> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(coords[rng.random_range(0..coords.len())]);
    let mut weights: Vec<f64> = vec![0.0; coords.len()];
    while centroids.len() < k {
        let mut total = 0.0;
        for (w, c) in weights.iter_mut().zip(coords) {
            *w = centroids.iter().map(|cent| dist2(*c, *cent)).fold(f64::MAX, f64::min);
            total += *w;
        }
        if total <= 0.0 {
            // every point coincides with a centroid; caller guaranteed k
            // distinct points so pick the first unused distinct point
            let next = coords
                .iter()
                .find(|c| !centroids.contains(c))
                .expect("distinct point available");
            centroids.push(*next);
            continue;
        }
        let mut target = rng.random::<f64>() * total;
        let mut chosen = coords.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            target -= w;
            if target <= 0.0 {
                chosen = i;
                break;
            }
        }
        centroids.push(coords[chosen]);
    }
    centroids
}

fn nearest_centroid(point: [f64; 2], centroids: &[[f64; 2]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::MAX;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(point, *c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Lloyd iterations with k-means++ seeding, deterministic for a given
/// (point order, k, seed). Converges when no centroid moves more than 1e-9
/// or after 300 iterations. Clusters are relabeled to quality classes by
/// ascending centroid coordinate sum.
pub fn kmeans_fit(
    points: &[FeaturePoint],
    k: usize,
    seed: u64,
) -> Result<ClusterModel, CalibrationError> {
    if !(2..=3).contains(&k) {
        return Err(CalibrationError::InvalidK(k));
    }
    if points.len() < k {
        return Err(CalibrationError::TooFewPoints { have: points.len(), need: k });
    }
    let coords: Vec<[f64; 2]> = points.iter().map(FeaturePoint::coords).collect();
    if coords.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
        return Err(CalibrationError::NonFinite);
    }
    let mut distinct: Vec<[f64; 2]> = Vec::new();
    for c in &coords {
        if !distinct.contains(c) {
            distinct.push(*c);
            if distinct.len() >= k {
                break;
            }
        }
    }
    if distinct.len() < k {
        return Err(CalibrationError::Degenerate { k });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut centroids = init_centroids(&coords, k, &mut rng);
    let mut assignments = vec![0usize; coords.len()];
    let mut inertia_history = Vec::new();

    for _ in 0..300 {
        for (a, c) in assignments.iter_mut().zip(&coords) {
            *a = nearest_centroid(*c, &centroids);
        }
        let inertia: f64 = coords
            .iter()
            .zip(&assignments)
            .map(|(c, &a)| dist2(*c, centroids[a]))
            .sum();
        inertia_history.push(inertia);

        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (c, &a) in coords.iter().zip(&assignments) {
            sums[a][0] += c[0];
            sums[a][1] += c[1];
            counts[a] += 1;
        }
        let mut next = centroids.clone();
        for i in 0..k {
            if counts[i] > 0 {
                next[i] = [sums[i][0] / counts[i] as f64, sums[i][1] / counts[i] as f64];
            } else {
                // relocate an empty centroid to the point farthest from its
                // current centroid; keeps the objective non-increasing
                let far = coords
                    .iter()
                    .enumerate()
                    .max_by(|(_, a), (_, b)| {
                        let da = dist2(**a, centroids[nearest_centroid(**a, &centroids)]);
                        let db = dist2(**b, centroids[nearest_centroid(**b, &centroids)]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                next[i] = coords[far];
            }
        }
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| dist2(*a, *b).sqrt())
            .fold(0.0f64, f64::max);
        centroids = next;
        if shift < 1e-9 {
            break;
        }
    }
    // final assignment against the converged centroids
    for (a, c) in assignments.iter_mut().zip(&coords) {
        *a = nearest_centroid(*c, &centroids);
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let sa = centroids[a][0] + centroids[a][1];
        let sb = centroids[b][0] + centroids[b][1];
        sa.partial_cmp(&sb).unwrap()
    });
    let labels: &[QualityClass] = if k == 2 {
        &[QualityClass::Low, QualityClass::High]
    } else {
        &[QualityClass::Low, QualityClass::Mid, QualityClass::High]
    };
    let mut centroid_classes = vec![QualityClass::Low; k];
    for (rank, &centroid_idx) in order.iter().enumerate() {
        centroid_classes[centroid_idx] = labels[rank];
    }

    Ok(ClusterModel {
        k,
        seed,
        centroids,
        centroid_classes,
        points: points.to_vec(),
        assignments,
        inertia_history,
    })
}

/// Majority class among the k nearest training points (Euclidean on
/// (r2, bs)). Vote ties break toward the lower, more severe class.
pub fn knn_classify(
    point: &FeaturePoint,
    model: &ClusterModel,
    k_neighbors: usize,
) -> Result<QualityClass, CalibrationError> {
    if model.points.is_empty() {
        return Err(CalibrationError::UntrainedModel);
    }
    assert!(k_neighbors >= 1);
    let target = point.coords();
    let mut neighbors: Vec<(f64, usize)> = model
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| (dist2(target, p.coords()), i))
        .collect();
    neighbors.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut votes = [0usize; 3];
    for &(_, idx) in neighbors.iter().take(k_neighbors.min(neighbors.len())) {
        votes[model.class_of(idx) as usize] += 1;
    }
    let top = *votes.iter().max().unwrap();
    // ascending scan returns the most severe class on a tie
    let winner = votes.iter().position(|&v| v == top).unwrap();
    Ok(match winner {
        0 => QualityClass::Low,
        1 => QualityClass::Mid,
        _ => QualityClass::High,
    })
}

// ---------------------------------------------------------------------------
// Threshold classification
// ---------------------------------------------------------------------------

/// Lower/higher boundary for one feature: at or below `lower` is Low,
/// strictly above `upper` is High.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureBand {
    pub lower: f64,
    pub upper: f64,
}

impl FeatureBand {
    pub fn classify(&self, value: f64) -> QualityClass {
        if value <= self.lower {
            QualityClass::Low
        } else if value > self.upper {
            QualityClass::High
        } else {
            QualityClass::Mid
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub r2: FeatureBand,
    pub bs: FeatureBand,
}

impl ThresholdSet {
    /// Reference boundaries calibrated on the original annotated corpus.
    pub fn reference() -> Self {
        ThresholdSet {
            r2: FeatureBand { lower: 0.1785, upper: 0.4496 },
            bs: FeatureBand { lower: 0.5149, upper: 0.7215 },
        }
    }

    pub fn validate(&self) -> Result<(), CalibrationError> {
        for (name, band) in [("r2", self.r2), ("bs", self.bs)] {
            if band.lower >= band.upper || band.lower.is_nan() || band.upper.is_nan() {
                return Err(CalibrationError::InvalidThresholds(format!(
                    "{name}: lower {} not below upper {}",
                    band.lower, band.upper
                )));
            }
        }
        Ok(())
    }
}

/// How the two per-feature classes merge into one verdict class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassCombiner {
    /// Minimum of the two classes; one weak feature drags the verdict down.
    #[default]
    MostSevere,
    LeastSevere,
    Rouge2Only,
    SemanticOnly,
}

pub fn classify_with_combiner(
    point: &FeaturePoint,
    thresholds: &ThresholdSet,
    combiner: ClassCombiner,
) -> QualityClass {
    let by_r2 = thresholds.r2.classify(point.r2);
    let by_bs = thresholds.bs.classify(point.bs);
    match combiner {
        ClassCombiner::MostSevere => by_r2.min(by_bs),
        ClassCombiner::LeastSevere => by_r2.max(by_bs),
        ClassCombiner::Rouge2Only => by_r2,
        ClassCombiner::SemanticOnly => by_bs,
    }
}

/// Per-feature classification combined by the most severe class.
pub fn classify_by_thresholds(point: &FeaturePoint, thresholds: &ThresholdSet) -> QualityClass {
    classify_with_combiner(point, thresholds, ClassCombiner::MostSevere)
}

// ---------------------------------------------------------------------------
// Calibration artifacts
// ---------------------------------------------------------------------------

pub const CALIBRATION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CalibrationArtifact {
    Thresholds { thresholds: ThresholdSet, combiner: ClassCombiner },
    Clusters { model: ClusterModel, k_neighbors: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CalibrationFile {
    schema_version: u32,
    #[serde(flatten)]
    artifact: CalibrationArtifact,
}

pub fn save_calibration(path: &Path, artifact: &CalibrationArtifact) -> Result<(), CalibrationError> {
    let file = CalibrationFile {
        schema_version: CALIBRATION_SCHEMA_VERSION,
        artifact: artifact.clone(),
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| CalibrationError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    crate::report::write_atomic(path, json.as_bytes()).map_err(|e| CalibrationError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_calibration(path: &Path) -> Result<CalibrationArtifact, CalibrationError> {
    let text = std::fs::read_to_string(path).map_err(|e| CalibrationError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let file: CalibrationFile = serde_json::from_str(&text).map_err(|e| CalibrationError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if file.schema_version != CALIBRATION_SCHEMA_VERSION {
        return Err(CalibrationError::File {
            path: path.display().to_string(),
            message: format!("unsupported schema version {}", file.schema_version),
        });
    }
    if let CalibrationArtifact::Thresholds { thresholds, .. } = &file.artifact {
        thresholds.validate()?;
    }
    Ok(file.artifact)
}
