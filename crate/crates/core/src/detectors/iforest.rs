use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{require_rows, AnomalyScores};
use crate::data::{Dataset, RngSeed};
use crate::error::{Error, Result};

/// Rows drawn per tree.
pub const SUBSAMPLE_SIZE: usize = 256;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Average path length of an unsuccessful BST search over `n` points.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

enum Node {
    Leaf { size: usize },
    Split { feature: usize, value: f64, left: usize, right: usize },
}

struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn grow(dataset: &Dataset, rows: Vec<usize>, features: &[usize], rng: &mut ChaCha8Rng) -> Tree {
        let limit = (rows.len() as f64).log2().ceil() as usize;
        let mut tree = Tree { nodes: Vec::new() };
        tree.build(dataset, rows, features, 0, limit, rng);
        tree
    }

    fn build(
        &mut self,
        dataset: &Dataset,
        rows: Vec<usize>,
        features: &[usize],
        depth: usize,
        limit: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { size: rows.len() });
        if depth >= limit || rows.len() <= 1 {
            return id;
        }
        let candidates: Vec<(usize, f64, f64)> = features
            .iter()
            .filter_map(|&f| {
                let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    let v = dataset.row(r)[f];
                    (lo.min(v), hi.max(v))
                });
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if candidates.is_empty() {
            return id;
        }
        let (feature, lo, hi) = candidates[rng.random_range(0..candidates.len())];
        let value = rng.random_range(lo..hi);
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| dataset.row(r)[feature] < value);
        let left = self.build(dataset, left_rows, features, depth + 1, limit, rng);
        let right = self.build(dataset, right_rows, features, depth + 1, limit, rng);
        self.nodes[id] = Node::Split {
            feature,
            value,
            left,
            right,
        };
        id
    }

    fn path_length(&self, z: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[node] {
                Node::Leaf { size } => return depth + average_path_length(size),
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    node = if z[feature] < value { left } else { right };
                    depth += 1.0;
                }
            }
        }
    }
}

/// Isolation forest score `2^(-E[h]/c(ψ))` with `ψ = min(256, N)`.
pub fn iforest_scores(
    dataset: &Dataset,
    n_estimators: usize,
    max_features: f64,
    seed: RngSeed,
) -> Result<AnomalyScores> {
    require_rows(dataset, 2, "iForest")?;
    if n_estimators == 0 {
        return Err(Error::InvalidArgument("iForest needs at least one tree".into()));
    }
    if !(max_features > 0.0 && max_features <= 1.0) {
        return Err(Error::InvalidArgument(format!("max_features must be in (0, 1], got {max_features}")));
    }
    let n = dataset.n_rows();
    let k = dataset.n_cols();
    let psi = n.min(SUBSAMPLE_SIZE);
    let n_features = ((max_features * k as f64) as usize).clamp(1, k);

    let per_tree: Vec<Vec<f64>> = (0..n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed.derive(t as u64).rng();
            let mut rows = sample(&mut rng, n, psi).into_vec();
            rows.sort_unstable();
            let mut features = if n_features == k {
                (0..k).collect()
            } else {
                sample(&mut rng, k, n_features).into_vec()
            };
            features.sort_unstable();
            let tree = Tree::grow(dataset, rows, &features, &mut rng);
            dataset.rows().map(|z| tree.path_length(z)).collect()
        })
        .collect();

    let norm = average_path_length(psi);
    let mut mean_path = vec![0.0; n];
    for lengths in &per_tree {
        for (m, l) in mean_path.iter_mut().zip(lengths) {
            *m += l;
        }
    }
    let scores = mean_path
        .into_iter()
        .map(|total| 2f64.powf(-(total / n_estimators as f64) / norm))
        .collect();
    Ok(AnomalyScores(scores))
}
