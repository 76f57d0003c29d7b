use super::{require_rows, AnomalyScores};
use crate::data::Dataset;
use crate::error::Result;
use crate::metrics::average_ranks;

/// Skewness below this magnitude counts as symmetric.
const SYMMETRIC_SKEW: f64 = 1e-9;

fn skewness(col: &[f64]) -> f64 {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let m2 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if m2 <= 0.0 {
        return 0.0;
    }
    let m3 = col.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Copula-based outlier score. Per feature the left and right empirical
/// tail probabilities come from average ranks; the skew-corrected tail uses
/// the left tail for negatively skewed features and the right tail
/// otherwise. The score is the largest of the three summed `-log` tails.
pub fn copod_scores(dataset: &Dataset) -> Result<AnomalyScores> {
    require_rows(dataset, 3, "COPOD")?;
    let n = dataset.n_rows();
    let nf = n as f64;
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    let mut skewed = vec![0.0; n];
    for j in 0..dataset.n_cols() {
        let col = dataset.column(j);
        let ranks = average_ranks(&col);
        let skew = skewness(&col);
        for i in 0..n {
            let l = -(ranks[i] / nf).ln();
            // rank of -x equals n + 1 - rank of x
            let r = -((nf + 1.0 - ranks[i]) / nf).ln();
            left[i] += l;
            right[i] += r;
            skewed[i] += if skew.abs() <= SYMMETRIC_SKEW {
                0.5 * (l + r)
            } else if skew < 0.0 {
                l
            } else {
                r
            };
        }
    }
    let scores = (0..n).map(|i| left[i].max(right[i]).max(skewed[i])).collect();
    Ok(AnomalyScores(scores))
}
