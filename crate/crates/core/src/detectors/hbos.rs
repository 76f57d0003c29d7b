use super::{require_rows, AnomalyScores};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Height given to an empty bin before taking the log.
const EMPTY_BIN_HEIGHT: f64 = 1e-9;

/// Bin of `v` in `n_bins` equal-width bins over `[min, max]`; the max edge
/// belongs to the last bin.
fn bin_of(v: f64, min: f64, max: f64, n_bins: usize) -> usize {
    if max <= min {
        return 0;
    }
    let pos = (v - min) / (max - min) * n_bins as f64;
    (pos.floor().max(0.0) as usize).min(n_bins - 1)
}

/// Histogram-based outlier score: sum over features of `log(1/h)` where `h`
/// is the row's bin height normalized by the tallest bin.
pub fn hbos_scores(dataset: &Dataset, n_bins: usize) -> Result<AnomalyScores> {
    require_rows(dataset, 1, "HBOS")?;
    if n_bins < 2 {
        return Err(Error::InvalidArgument(format!("HBOS needs at least 2 bins, got {n_bins}")));
    }
    let n = dataset.n_rows();
    let mut scores = vec![0.0; n];
    for j in 0..dataset.n_cols() {
        let col = dataset.column(j);
        let (min, max) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let bins: Vec<usize> = col.iter().map(|&v| bin_of(v, min, max, n_bins)).collect();
        let mut counts = vec![0usize; n_bins];
        for &b in &bins {
            counts[b] += 1;
        }
        let tallest = *counts.iter().max().unwrap_or(&1) as f64;
        let heights: Vec<f64> = counts
            .iter()
            .map(|&c| if c == 0 { EMPTY_BIN_HEIGHT } else { c as f64 / tallest })
            .collect();
        for (s, &b) in scores.iter_mut().zip(&bins) {
            *s += -heights[b].ln();
        }
    }
    Ok(AnomalyScores(scores))
}
