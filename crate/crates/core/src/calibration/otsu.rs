//! Multi-level Otsu thresholding: histogram splits maximizing
//! between-class variance.

use super::CalibrationError;

/// Histogram of `values` over [min, max] with `bins` equal-width bins.
/// Returns (counts, min, width).
fn histogram(values: &[f64], bins: usize) -> Result<(Vec<u64>, f64, f64), CalibrationError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CalibrationError::NonFinite);
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(CalibrationError::ConstantInput);
    }
    let width = (max - min) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in values {
        let idx = (((v - min) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok((counts, min, width))
}

/// Between-class variance criterion for a split of the histogram into
/// contiguous classes: sum over classes of S^2/W with S the first moment
/// and W the weight. Computed from cumulative tables in O(classes).
fn split_criterion(
    cum_weight: &[f64],
    cum_moment: &[f64],
    cuts: &[usize],
    bins: usize,
) -> Option<f64> {
    let range = |lo: usize, hi: usize| -> (f64, f64) {
        // inclusive bin range [lo, hi]
        let w = cum_weight[hi + 1] - cum_weight[lo];
        let m = cum_moment[hi + 1] - cum_moment[lo];
        (w, m)
    };
    let mut total = 0.0;
    let mut lo = 0;
    for &cut in cuts.iter().chain(std::iter::once(&(bins - 1))) {
        let (w, m) = range(lo, cut);
        if w == 0.0 {
            return None; // empty class, not a valid split
        }
        total += m * m / w;
        lo = cut + 1;
    }
    Some(total)
}

/// Exhaustive search over ascending cut combinations. Ties keep the first
/// (lexicographically smallest) combination.
fn best_cuts(counts: &[u64], classes: usize) -> Option<Vec<usize>> {
    let bins = counts.len();
    let mut cum_weight = vec![0.0f64; bins + 1];
    let mut cum_moment = vec![0.0f64; bins + 1];
    for (i, &c) in counts.iter().enumerate() {
        cum_weight[i + 1] = cum_weight[i] + c as f64;
        cum_moment[i + 1] = cum_moment[i] + (i as f64) * c as f64;
    }

    let n_cuts = classes - 1;
    let mut cuts: Vec<usize> = (0..n_cuts).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        if let Some(score) = split_criterion(&cum_weight, &cum_moment, &cuts, bins) {
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, cuts.clone()));
            }
        }
        // next ascending combination of cut positions in 0..bins-1
        let mut i = n_cuts;
        loop {
            if i == 0 {
                return best.map(|(_, c)| c);
            }
            i -= 1;
            if cuts[i] < bins - 1 - (n_cuts - i) {
                cuts[i] += 1;
                for j in i + 1..n_cuts {
                    cuts[j] = cuts[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Splits `values` into `classes` groups by histogram analysis and returns
/// the `classes - 1` thresholds in ascending order, each the upper edge of
/// its cut bin. A value classifies as class i when it lies at or below
/// threshold i (and above threshold i-1).
pub fn multi_otsu(
    values: &[f64],
    classes: usize,
    bins: usize,
) -> Result<Vec<f64>, CalibrationError> {
    assert!(classes >= 2, "need at least two classes");
    assert!(bins >= classes, "need at least as many bins as classes");
    if values.len() < classes {
        return Err(CalibrationError::TooFewPoints { have: values.len(), need: classes });
    }
    let (counts, min, width) = histogram(values, bins)?;
    let cuts = best_cuts(&counts, classes).ok_or(CalibrationError::ConstantInput)?;
    Ok(cuts.iter().map(|&c| min + (c + 1) as f64 * width).collect())
}
