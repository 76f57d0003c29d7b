use rayon::prelude::*;

use super::{require_rows, AnomalyScores};
use crate::data::Dataset;
use crate::error::Result;
use crate::neighbors::{clamp_k, knn_table};

/// Neighbour pairs closer than this to the query are skipped.
const MIN_PAIR_DISTANCE: f64 = 1e-12;

/// Fast angle-based outlier score over the k-neighbourhood: the negated
/// population variance of `<a-z, b-z> / (|a-z|² |b-z|²)` over neighbour pairs.
pub fn abod_scores(dataset: &Dataset, k: usize) -> Result<AnomalyScores> {
    require_rows(dataset, 3, "ABOD")?;
    let k = clamp_k(k.max(2), dataset.n_rows(), "ABOD");
    let table = knn_table(dataset, k);
    let scores = table
        .par_iter()
        .enumerate()
        .map(|(i, nb)| {
            let z = dataset.row(i);
            let diffs: Vec<Vec<f64>> = nb
                .iter()
                .map(|n| dataset.row(n.index).iter().zip(z).map(|(a, b)| a - b).collect())
                .collect();
            let norms: Vec<f64> = diffs.iter().map(|d| d.iter().map(|v| v * v).sum()).collect();
            let mut terms = Vec::with_capacity(k * (k - 1) / 2);
            for a in 0..k {
                if nb[a].distance < MIN_PAIR_DISTANCE {
                    continue;
                }
                for b in a + 1..k {
                    if nb[b].distance < MIN_PAIR_DISTANCE {
                        continue;
                    }
                    let dot: f64 = diffs[a].iter().zip(&diffs[b]).map(|(x, y)| x * y).sum();
                    terms.push(dot / (norms[a] * norms[b]));
                }
            }
            if terms.is_empty() {
                return 0.0;
            }
            let m = terms.len() as f64;
            let mean = terms.iter().sum::<f64>() / m;
            let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / m;
            -var
        })
        .collect();
    Ok(AnomalyScores(scores))
}
