//! Anomaly-oriented meta-features.
//!
//! Every observation is summarised by four Mahalanobis distances: one to the
//! leave-one-out mean of the whole dataset and three to the mean of its
//! `s ∈ {20, 60, 80}` nearest neighbours. Each distance profile is reduced to
//! four shape statistics (range, centre mass, tail half, tail quarter), and
//! the mean local/global ratio per neighbourhood gives three locality values:
//! 19 numbers per dataset.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::neighbors::knn_table;

/// Neighbourhood sizes of the local profiles.
pub const NEIGHBORHOODS: [usize; 3] = [20, 60, 80];

/// Number of meta-features.
pub const N_META_FEATURES: usize = 19;

/// Column names in output order.
pub const FEATURE_NAMES: [&str; N_META_FEATURES] = [
    "TR_G", "CM_G", "TH_G", "TQ_G", "TR_L20", "CM_L20", "TH_L20", "TQ_L20", "TR_L60", "CM_L60",
    "TH_L60", "TQ_L60", "TR_L80", "CM_L80", "TH_L80", "TQ_L80", "LOC20", "LOC60", "LOC80",
];

/// Relative ridge added to every covariance before inversion.
pub const RIDGE_SCALE: f64 = 1e-6;
/// Absolute floor on the ridge.
pub const RIDGE_FLOOR: f64 = 1e-12;
/// Global distances at or below this are left out of the locality average.
pub const LOCALITY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileKind {
    Global,
    Local(usize),
}

/// Per-observation Mahalanobis distances of one kind.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceProfile {
    pub kind: ProfileKind,
    pub values: Vec<f64>,
}

/// `sqrt((z-mu)^T S^-1 (z-mu))`, with round-off negatives clamped to zero.
pub fn mahalanobis(z: &[f64], mu: &[f64], s_inv: &DMatrix<f64>) -> Result<f64> {
    let k = z.len();
    if mu.len() != k || s_inv.nrows() != k || s_inv.ncols() != k {
        return Err(Error::DimensionMismatch(format!(
            "z has {k} entries, mu {}, S^-1 is {}x{}",
            mu.len(),
            s_inv.nrows(),
            s_inv.ncols()
        )));
    }
    let diff = DVector::from_iterator(k, z.iter().zip(mu).map(|(a, b)| a - b));
    let q = diff.dot(&(s_inv * &diff));
    Ok(q.max(0.0).sqrt())
}

/// Adds `λI` with `λ = max(1e-6·trace(S)/K, 1e-12)`.
pub fn regularize(cov: &mut DMatrix<f64>) {
    let k = cov.nrows();
    let lambda = (RIDGE_SCALE * cov.trace() / k as f64).max(RIDGE_FLOOR);
    for j in 0..k {
        cov[(j, j)] += lambda;
    }
}

/// Sample covariance (denominator n−1) of the given rows.
pub(crate) fn covariance(rows: &[&[f64]], k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = rows.len();
    let mut mean = vec![0.0; k];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, k, |i, j| rows[i][j] - mean[j]);
    let denom = (n.max(2) - 1) as f64;
    let cov = centered.tr_mul(&centered) / denom;
    (mean, cov)
}

/// Inverse of the regularized matrix.
pub(crate) fn precision(mut cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    regularize(&mut cov);
    match cov.clone().cholesky() {
        Some(ch) => Ok(ch.inverse()),
        None => cov
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("covariance is not invertible after regularization".into())),
    }
}

fn require_rows(dataset: &Dataset, what: &'static str) -> Result<()> {
    if dataset.n_rows() < 3 {
        return Err(Error::TooFewRows {
            what,
            required: 3,
            actual: dataset.n_rows(),
        });
    }
    Ok(())
}

/// Distance of every row to the mean of all other rows, under the regularized
/// full-sample covariance.
pub fn global_profile(dataset: &Dataset) -> Result<DistanceProfile> {
    require_rows(dataset, "the global distance profile")?;
    let rows: Vec<&[f64]> = dataset.rows().collect();
    let (_, cov) = covariance(&rows, dataset.n_cols());
    let s_inv = precision(cov)?;
    global_profile_with_precision(dataset, &s_inv)
}

/// Global profile under a caller-supplied inverse covariance.
pub fn global_profile_with_precision(dataset: &Dataset, s_inv: &DMatrix<f64>) -> Result<DistanceProfile> {
    require_rows(dataset, "the global distance profile")?;
    let n = dataset.n_rows() as f64;
    let k = dataset.n_cols();
    let mut total = vec![0.0; k];
    for r in dataset.rows() {
        for (t, v) in total.iter_mut().zip(r) {
            *t += v;
        }
    }
    let values = dataset
        .rows()
        .map(|z| {
            // (Nμ − z)/(N−1) with Nμ = column totals
            let loo: Vec<f64> = total.iter().zip(z).map(|(t, v)| (t - v) / (n - 1.0)).collect();
            mahalanobis(z, &loo, s_inv)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DistanceProfile {
        kind: ProfileKind::Global,
        values,
    })
}

fn local_distance(dataset: &Dataset, i: usize, neighbors: &[usize]) -> Result<f64> {
    let rows: Vec<&[f64]> = neighbors.iter().map(|&j| dataset.row(j)).collect();
    let (mean, cov) = covariance(&rows, dataset.n_cols());
    let s_inv = precision(cov)?;
    mahalanobis(dataset.row(i), &mean, &s_inv)
}

/// Distance of every row to the mean of its `s` nearest neighbours (self
/// excluded) under their regularized covariance. `s` is clamped to N−1.
pub fn local_profile(dataset: &Dataset, s: usize) -> Result<DistanceProfile> {
    require_rows(dataset, "a local distance profile")?;
    if s < 2 {
        return Err(Error::InvalidArgument(format!("neighbourhood size must be >= 2, got {s}")));
    }
    let s_eff = s.min(dataset.n_rows() - 1);
    let table = knn_table(dataset, s_eff);
    let values = table
        .par_iter()
        .enumerate()
        .map(|(i, nb)| {
            let idx: Vec<usize> = nb.iter().map(|n| n.index).collect();
            local_distance(dataset, i, &idx)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DistanceProfile {
        kind: ProfileKind::Local(s),
        values,
    })
}

/// Linear-interpolation percentile at position `q·(n−1)` of an ascending slice.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Shape statistics of one distance profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileFeatures {
    pub total_range: f64,
    pub center_mass: f64,
    pub tail_half: f64,
    pub tail_quarter: f64,
}

pub fn profile_features(values: &[f64]) -> Result<ProfileFeatures> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty distance profile".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let tr = max - min;
    if tr <= 0.0 {
        return Ok(ProfileFeatures {
            total_range: 0.0,
            center_mass: 0.0,
            tail_half: 0.0,
            tail_quarter: 0.0,
        });
    }
    let p25 = percentile(&sorted, 0.25);
    let p50 = percentile(&sorted, 0.50);
    let p75 = percentile(&sorted, 0.75);
    // interpolation can step a hair outside [min, max]; the ratios are bounded by construction
    let unit = |v: f64| v.clamp(0.0, 1.0);
    Ok(ProfileFeatures {
        total_range: tr,
        center_mass: unit((p75 - p25) / tr),
        tail_half: unit((max - p50) / tr),
        tail_quarter: unit((max - p75) / tr),
    })
}

/// Mean of `local/global` over rows whose global distance exceeds [`LOCALITY_EPS`].
pub fn locality(local: &[f64], global: &[f64]) -> Result<f64> {
    if local.len() != global.len() {
        return Err(Error::DimensionMismatch(format!(
            "local profile has {} values, global {}",
            local.len(),
            global.len()
        )));
    }
    let (sum, count) = local
        .iter()
        .zip(global)
        .filter(|(_, &g)| g > LOCALITY_EPS)
        .fold((0.0, 0usize), |(s, c), (l, g)| (s + l / g, c + 1));
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// The 19 meta-features of one dataset, in [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetaFeatureVector(pub [f64; N_META_FEATURES]);

impl MetaFeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.0[i])
    }
}

/// Computes the meta-feature vector. Pure and deterministic.
pub fn extract(dataset: &Dataset) -> Result<MetaFeatureVector> {
    require_rows(dataset, "meta-feature extraction")?;
    let n = dataset.n_rows();
    let global = global_profile(dataset)?;

    // one neighbour table at the widest size serves every smaller s as a prefix
    let s_max = NEIGHBORHOODS.iter().copied().max().unwrap_or(2).min(n - 1);
    let table = knn_table(dataset, s_max);
    let sizes: Vec<usize> = NEIGHBORHOODS.iter().map(|&s| s.min(n - 1)).collect();
    let per_point: Vec<Vec<f64>> = table
        .par_iter()
        .enumerate()
        .map(|(i, nb)| {
            let idx: Vec<usize> = nb.iter().map(|n| n.index).collect();
            sizes
                .iter()
                .map(|&s| local_distance(dataset, i, &idx[..s]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut out = [0.0; N_META_FEATURES];
    let g = profile_features(&global.values)?;
    out[..4].copy_from_slice(&[g.total_range, g.center_mass, g.tail_half, g.tail_quarter]);
    for (slot, _) in NEIGHBORHOODS.iter().enumerate() {
        let local: Vec<f64> = per_point.iter().map(|v| v[slot]).collect();
        let f = profile_features(&local)?;
        let base = 4 * (slot + 1);
        out[base..base + 4].copy_from_slice(&[f.total_range, f.center_mass, f.tail_half, f.tail_quarter]);
        out[16 + slot] = locality(&local, &global.values)?;
    }
    if let Some(bad) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "meta-feature {} is not finite",
            FEATURE_NAMES[bad]
        )));
    }
    Ok(MetaFeatureVector(out))
}

/// Writes `name,TR_G,...,LOC80` rows to `path`.
pub fn write_features_csv(path: &Path, rows: &[(String, MetaFeatureVector)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_features(file, rows)
}

/// Writes the features CSV to any writer.
pub fn write_features<W: std::io::Write>(writer: W, rows: &[(String, MetaFeatureVector)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["dataset"];
    header.extend(FEATURE_NAMES);
    w.write_record(&header)?;
    for (name, v) in rows {
        let mut rec = vec![name.clone()];
        rec.extend(v.0.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<features output>", e))?;
    Ok(())
}

pub fn read_features_csv(path: &Path) -> Result<Vec<(String, MetaFeatureVector)>> {
    if !path.exists() {
        return Err(Error::NotFound(path.display().to_string()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() != N_META_FEATURES + 1 || header.iter().skip(1).ne(FEATURE_NAMES.iter().copied()) {
        return Err(Error::Schema(format!("{} does not have the meta-feature header", path.display())));
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let mut v = [0.0; N_META_FEATURES];
        for (j, slot) in v.iter_mut().enumerate() {
            let cell = &rec[j + 1];
            *slot = cell.parse().map_err(|_| Error::Parse {
                row,
                column: FEATURE_NAMES[j].to_string(),
                message: format!("'{cell}' is not a number"),
            })?;
        }
        out.push((rec[0].to_string(), MetaFeatureVector(v)));
    }
    Ok(out)
}

/// Reads a features CSV into a name-keyed map.
pub fn read_features_map(path: &Path) -> Result<std::collections::BTreeMap<String, MetaFeatureVector>> {
    Ok(read_features_csv(path)?.into_iter().collect())
}
