use serde::{Deserialize, Serialize};

use super::{require_rows, AnomalyScores};
use crate::data::Dataset;
use crate::error::Result;
use crate::neighbors::{clamp_k, knn_table};

/// How the k neighbour distances collapse into one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnMethod {
    Mean,
    Largest,
}

/// Mean (or largest) distance to the `k` nearest neighbours.
pub fn knn_scores(dataset: &Dataset, k: usize, method: KnnMethod) -> Result<AnomalyScores> {
    require_rows(dataset, 2, "kNN")?;
    let k = clamp_k(k.max(1), dataset.n_rows(), "kNN");
    let table = knn_table(dataset, k);
    let scores = table
        .iter()
        .map(|nb| match method {
            KnnMethod::Mean => nb.iter().map(|n| n.distance).sum::<f64>() / k as f64,
            KnnMethod::Largest => nb[k - 1].distance,
        })
        .collect();
    Ok(AnomalyScores(scores))
}

/// Added to the mean reachability distance so that a row sitting on a stack
/// of exact duplicates gets a huge but finite density. Two such rows then
/// compare as exactly 1.
const LRD_EPS: f64 = 1e-10;

/// Local outlier factor over the `k` nearest neighbours.
pub fn lof_scores(dataset: &Dataset, k: usize) -> Result<AnomalyScores> {
    require_rows(dataset, 2, "LOF")?;
    let k = clamp_k(k.max(1), dataset.n_rows(), "LOF");
    let table = knn_table(dataset, k);
    let k_distance: Vec<f64> = table.iter().map(|nb| nb[k - 1].distance).collect();
    let lrd: Vec<f64> = table
        .iter()
        .map(|nb| {
            let reach: f64 = nb.iter().map(|n| n.distance.max(k_distance[n.index])).sum();
            1.0 / (reach / k as f64 + LRD_EPS)
        })
        .collect();
    let scores = table
        .iter()
        .enumerate()
        .map(|(i, nb)| nb.iter().map(|n| lrd[n.index] / lrd[i]).sum::<f64>() / k as f64)
        .collect();
    Ok(AnomalyScores(scores))
}
