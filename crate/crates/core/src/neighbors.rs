//! Exact k-nearest-neighbour tables by brute force.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::data::Dataset;

/// One neighbour: row index and Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[inline]
pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// For every row, its `k` nearest other rows sorted by ascending distance,
/// ties broken by ascending row index. `k` must be ≤ N−1.
pub fn knn_table(dataset: &Dataset, k: usize) -> Vec<Vec<Neighbor>> {
    let n = dataset.n_rows();
    assert!(k < n, "k={k} must be below N={n}");
    (0..n)
        .into_par_iter()
        .map(|i| {
            let zi = dataset.row(i);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_euclidean(zi, dataset.row(j)), j))
                .collect();
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, by_distance_then_index);
                cand.truncate(k);
            }
            cand.sort_unstable_by(by_distance_then_index);
            cand.into_iter()
                .map(|(d2, j)| Neighbor {
                    index: j,
                    distance: d2.sqrt(),
                })
                .collect()
        })
        .collect()
}

/// Clamps a requested neighbourhood size to N−1, logging when it changes.
pub fn clamp_k(requested: usize, n_rows: usize, who: &str) -> usize {
    let max = n_rows.saturating_sub(1);
    if requested > max {
        log::warn!("{who}: k={requested} exceeds N-1={max}, clamping");
        max
    } else {
        requested
    }
}
