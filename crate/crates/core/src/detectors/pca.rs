use nalgebra::{DMatrix, SymmetricEigen};

use super::{require_rows, AnomalyScores};
use crate::data::Dataset;
use crate::error::Result;

/// Fraction of variance the retained components must reach.
pub const PCA_VARIANCE_TARGET: f64 = 0.95;

/// Eigenvalues below this fraction of the total count as zero.
const RELATIVE_EIGEN_FLOOR: f64 = 1e-12;

/// PCA score with the component count chosen by [`PCA_VARIANCE_TARGET`].
pub fn pca_scores(dataset: &Dataset) -> Result<AnomalyScores> {
    pca_scores_with(dataset, None)
}

/// Sum over retained components of `projection²/eigenvalue`, plus the
/// residual energy divided by the mean discarded eigenvalue.
pub(crate) fn pca_scores_with(dataset: &Dataset, n_components: Option<usize>) -> Result<AnomalyScores> {
    require_rows(dataset, 3, "PCA")?;
    let n = dataset.n_rows();
    let k = dataset.n_cols();
    let mean: Vec<f64> = (0..k)
        .map(|j| dataset.rows().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let centered = DMatrix::from_fn(n, k, |i, j| dataset.row(i)[j] - mean[j]);
    let cov = centered.tr_mul(&centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&c| eig.eigenvalues[c].max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Ok(AnomalyScores(vec![0.0; n]));
    }
    let floor = total * RELATIVE_EIGEN_FLOOR;

    let retained = match n_components {
        Some(m) => m.min(k),
        None => {
            let mut cumulative = 0.0;
            let mut m = k;
            for (idx, &l) in eigenvalues.iter().enumerate() {
                cumulative += l;
                if cumulative >= PCA_VARIANCE_TARGET * total {
                    m = idx + 1;
                    break;
                }
            }
            m
        }
    };
    let discarded_mass: f64 = eigenvalues[retained..].iter().sum();
    let discarded_mean = if retained < k {
        discarded_mass / (k - retained) as f64
    } else {
        0.0
    };

    let projections = &centered * &eig.eigenvectors;
    let scores = (0..n)
        .map(|i| {
            let row_energy: f64 = centered.row(i).iter().map(|v| v * v).sum();
            let mut score = 0.0;
            let mut kept_energy = 0.0;
            for (slot, &c) in order.iter().enumerate().take(retained) {
                let p = projections[(i, c)];
                kept_energy += p * p;
                if eigenvalues[slot] > floor {
                    score += p * p / eigenvalues[slot];
                }
            }
            if discarded_mean > floor {
                score += (row_energy - kept_energy).max(0.0) / discarded_mean;
            }
            score
        })
        .collect();
    Ok(AnomalyScores(scores))
}
