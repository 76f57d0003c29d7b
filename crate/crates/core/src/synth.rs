//! Synthetic labeled corpora: Gaussian-mixture inliers with planted global,
//! local and collective anomalies.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, Dataset, RngSeed};
use crate::error::{Error, Result};
use crate::metafeatures::{covariance, mahalanobis, percentile, precision};

/// Upper bound on the anomaly fraction of a dataset.
pub const MAX_ANOMALY_RATIO: f64 = 0.2;
/// Minimum Mahalanobis distance of a global anomaly from every cluster.
pub const GLOBAL_MIN_DISTANCE: f64 = 6.0;
/// Global anomalies also clear the farthest inlier by this factor.
pub const GLOBAL_MARGIN: f64 = 1.25;
/// Smallest collective group; smaller groups become global anomalies.
pub const MIN_COLLECTIVE: usize = 3;

const MAX_ATTEMPTS: usize = 1000;
const CORPUS_RETRIES: u64 = 20;

/// Parameters of one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_inliers: usize,
    pub n_anomalies: usize,
    pub k_features: usize,
    pub n_clusters: usize,
    /// Fractions of (global, local, collective) anomalies.
    pub anomaly_mix: [f64; 3],
    /// Ratio between the widest and the tightest possible cluster scale.
    pub scale_spread: f64,
    pub seed: RngSeed,
}

impl SynthSpec {
    /// A single-cluster spec with only global anomalies.
    pub fn new(n_inliers: usize, n_anomalies: usize, k_features: usize, seed: u64) -> Self {
        SynthSpec {
            n_inliers,
            n_anomalies,
            k_features,
            n_clusters: 1,
            anomaly_mix: [1.0, 0.0, 0.0],
            scale_spread: 1.0,
            seed: RngSeed(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_anomalies == 0 {
            return bad("n_anomalies must be at least 1".into());
        }
        if self.k_features == 0 || self.n_clusters == 0 {
            return bad("k_features and n_clusters must be at least 1".into());
        }
        if self.n_inliers < 2 * self.n_clusters {
            return bad(format!(
                "{} inliers cannot populate {} clusters",
                self.n_inliers, self.n_clusters
            ));
        }
        let ratio = self.n_anomalies as f64 / (self.n_inliers + self.n_anomalies) as f64;
        if ratio > MAX_ANOMALY_RATIO {
            return bad(format!("anomaly ratio {ratio:.3} exceeds {MAX_ANOMALY_RATIO}"));
        }
        if self.anomaly_mix.iter().any(|f| !(f.is_finite() && *f >= 0.0))
            || (self.anomaly_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return bad(format!("anomaly_mix {:?} must be nonnegative and sum to 1", self.anomaly_mix));
        }
        if !(self.scale_spread.is_finite() && self.scale_spread > 0.0) {
            return bad("scale_spread must be positive".into());
        }
        Ok(())
    }

    /// Anomaly counts per type; collective groups below [`MIN_COLLECTIVE`]
    /// are folded into the global count.
    pub fn anomaly_counts(&self) -> [usize; 3] {
        let mut c = largest_remainder(self.n_anomalies, &self.anomaly_mix);
        if c[2] > 0 && c[2] < MIN_COLLECTIVE {
            c[0] += c[2];
            c[2] = 0;
        }
        c
    }
}

/// Splits `total` proportionally to `weights`; remainder ties go to the earlier entry.
fn largest_remainder<const M: usize>(total: usize, weights: &[f64; M]) -> [usize; M] {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out = [0usize; M];
    for (o, e) in out.iter_mut().zip(&exact) {
        *o = e.floor() as usize;
    }
    let mut order: Vec<usize> = (0..M).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let left = total - out.iter().sum::<usize>();
    for &i in order.iter().take(left) {
        out[i] += 1;
    }
    out
}

/// Gaussian component `mean + scale * L z` with lower-triangular `L`.
struct Cluster {
    mean: DVector<f64>,
    scale: f64,
    chol: DMatrix<f64>,
}

impl Cluster {
    fn random(k: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let chol = DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                rng.random_range(0.5..1.5)
            } else if j < i {
                0.3 * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            }
        });
        Cluster {
            mean: DVector::zeros(k),
            scale,
            chol,
        }
    }

    fn point(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.mean + (&self.chol * z) * self.scale
    }

    /// Mahalanobis distance under this component's own covariance.
    fn distance(&self, x: &DVector<f64>) -> f64 {
        let d = (x - &self.mean) / self.scale;
        self.chol
            .solve_lower_triangular(&d)
            .expect("diagonal entries are positive")
            .norm()
    }
}

fn normal_vec(k: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(k, |_, _| rng.sample(StandardNormal))
}

fn unit_vec(k: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let v = normal_vec(k, rng);
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn nearest_distance(clusters: &[Cluster], x: &DVector<f64>) -> f64 {
    clusters.iter().map(|c| c.distance(x)).fold(f64::INFINITY, f64::min)
}

/// Draws cluster shapes and places the means at least `2√K + 6` apart in
/// each other's Mahalanobis metric, inside a box whose size does not grow
/// with the cluster count.
fn place_clusters(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Cluster>> {
    let k = spec.k_features;
    let separation = 2.0 * (k as f64).sqrt() + 6.0;
    let max_scale = spec.scale_spread.max(1.0);
    let half_width = 2.25 * separation * max_scale;
    let mut clusters: Vec<Cluster> = Vec::with_capacity(spec.n_clusters);
    for _ in 0..spec.n_clusters {
        let scale = spec.scale_spread.powf(rng.random::<f64>());
        let mut c = Cluster::random(k, scale, rng);
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            c.mean = DVector::from_fn(k, |_, _| rng.random_range(-half_width..half_width));
            if clusters
                .iter()
                .all(|o| o.distance(&c.mean) >= separation && c.distance(&o.mean) >= separation)
            {
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InfeasibleSpec(format!(
                "could not separate {} clusters in {} dimension(s)",
                spec.n_clusters, k
            )));
        }
        clusters.push(c);
    }
    Ok(clusters)
}

/// Generates the labeled dataset described by `spec`. Rows are shuffled.
pub fn generate_dataset(spec: &SynthSpec) -> Result<Dataset> {
    generate_with_distances(spec).map(|(d, _)| d)
}

/// [`generate_dataset`] plus, per row, the Mahalanobis distance to the
/// nearest mixture component under that component's true covariance.
pub fn generate_with_distances(spec: &SynthSpec) -> Result<(Dataset, Vec<f64>)> {
    spec.validate()?;
    let mut rng = spec.seed.rng();
    let k = spec.k_features;
    let clusters = place_clusters(spec, &mut rng)?;

    let weights: Vec<f64> = (0..spec.n_clusters).map(|_| rng.random_range(0.5..1.5)).collect();
    let sizes = cluster_sizes(spec.n_inliers, &weights);
    let mut inliers: Vec<(usize, DVector<f64>)> = Vec::with_capacity(spec.n_inliers);
    for (c, &size) in sizes.iter().enumerate() {
        for _ in 0..size {
            let z = normal_vec(k, &mut rng);
            inliers.push((c, clusters[c].point(&z)));
        }
    }
    // farthest own-cluster radius per cluster, and farthest nearest-cluster radius overall
    let mut radius = vec![0.0_f64; spec.n_clusters];
    let mut outer = 0.0_f64;
    for (c, x) in &inliers {
        radius[*c] = radius[*c].max(clusters[*c].distance(x));
        outer = outer.max(nearest_distance(&clusters, x));
    }
    let global_threshold = GLOBAL_MIN_DISTANCE.max(GLOBAL_MARGIN * outer);

    let [n_global, n_local, n_collective] = spec.anomaly_counts();
    let mut anomalies: Vec<DVector<f64>> = Vec::with_capacity(spec.n_anomalies);
    for _ in 0..n_global {
        anomalies.push(global_point(&clusters, global_threshold, 1.5, &mut rng)?);
    }
    if n_local > 0 {
        let rows: Vec<&[f64]> = inliers.iter().map(|(_, x)| x.as_slice()).collect();
        let (mu, cov) = covariance(&rows, k);
        let s_inv = precision(cov)?;
        let mut inlier_global: Vec<f64> = rows
            .iter()
            .map(|r| mahalanobis(r, &mu, &s_inv))
            .collect::<Result<_>>()?;
        inlier_global.sort_by(f64::total_cmp);
        let cap = percentile(&inlier_global, 0.99);
        for _ in 0..n_local {
            anomalies.push(local_point(&clusters, &radius, &mu, &s_inv, cap, &mut rng)?);
        }
    }
    if n_collective > 0 {
        let center = global_point(&clusters, global_threshold, 1.5, &mut rng)?;
        let tight = clusters.iter().map(|c| c.scale).fold(f64::INFINITY, f64::min) * 0.05;
        for _ in 0..n_collective {
            anomalies.push(&center + normal_vec(k, &mut rng) * tight);
        }
    }

    let mut rows: Vec<(DVector<f64>, u8)> = inliers
        .into_iter()
        .map(|(_, x)| (x, 0))
        .chain(anomalies.into_iter().map(|x| (x, 1)))
        .collect();
    rows.shuffle(&mut rng);
    let distances = rows.iter().map(|(x, _)| nearest_distance(&clusters, x)).collect();
    let (values, labels): (Vec<Vec<f64>>, Vec<u8>) =
        rows.into_iter().map(|(x, l)| (x.as_slice().to_vec(), l)).unzip();
    let dataset = Dataset::from_rows(format!("synth_{:016x}", spec.seed.0), &values, Some(labels))?;
    Ok((dataset, distances))
}

/// Inlier counts per cluster, each at least 2.
fn cluster_sizes(n_inliers: usize, weights: &[f64]) -> Vec<usize> {
    let c = weights.len();
    let spare = n_inliers - 2 * c;
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * spare as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let left = spare - sizes.iter().sum::<usize>();
    for &i in order.iter().take(left) {
        sizes[i] += 1;
    }
    sizes.iter().map(|s| s + 2).collect()
}

/// A point at least `threshold` from every cluster, at most `reach` times
/// the threshold from the cluster it was launched from.
fn global_point(clusters: &[Cluster], threshold: f64, reach: f64, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
    let k = clusters[0].mean.len();
    for _ in 0..MAX_ATTEMPTS {
        let c = &clusters[rng.random_range(0..clusters.len())];
        let r = threshold * rng.random_range(1.0..reach);
        let x = c.point(&(unit_vec(k, rng) * r));
        if nearest_distance(clusters, &x) >= threshold {
            return Ok(x);
        }
    }
    Err(Error::InfeasibleSpec("no room for a global anomaly".into()))
}

/// A point 2 to 3 units beyond the farthest inlier of one cluster, outside
/// every other cluster, whose global distance stays within `cap`. Tighter
/// clusters are tried first.
fn local_point(
    clusters: &[Cluster],
    radius: &[f64],
    mu: &[f64],
    s_inv: &DMatrix<f64>,
    cap: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>> {
    let k = clusters[0].mean.len();
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by(|&a, &b| clusters[a].scale.total_cmp(&clusters[b].scale).then(a.cmp(&b)));
    let per_cluster = MAX_ATTEMPTS / clusters.len();
    for _ in 0..per_cluster {
        for &c in &order {
            let r = radius[c] + rng.random_range(2.0..3.0);
            let x = clusters[c].point(&(unit_vec(k, rng) * r));
            let inside_other = clusters
                .iter()
                .enumerate()
                .any(|(o, cl)| o != c && cl.distance(&x) <= radius[o]);
            if !inside_other && mahalanobis(x.as_slice(), mu, s_inv)? <= cap {
                return Ok(x);
            }
        }
    }
    Err(Error::InfeasibleSpec("no position satisfies the local-anomaly constraints".into()))
}

/// Sampling ranges for [`generate_corpus`]; bounds are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthRanges {
    pub n_rows: (usize, usize),
    pub k_features: (usize, usize),
    pub n_clusters: (usize, usize),
    pub anomaly_ratio: (f64, f64),
    pub scale_spread: (f64, f64),
}

impl Default for SynthRanges {
    fn default() -> Self {
        SynthRanges {
            n_rows: (100, 2000),
            k_features: (3, 50),
            n_clusters: (1, 5),
            anomaly_ratio: (0.02, 0.15),
            scale_spread: (1.0, 5.0),
        }
    }
}

impl SynthRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_rows.0 >= 20
            && self.n_rows.0 <= self.n_rows.1
            && self.k_features.0 >= 1
            && self.k_features.0 <= self.k_features.1
            && self.n_clusters.0 >= 1
            && self.n_clusters.0 <= self.n_clusters.1
            && self.anomaly_ratio.0 > 0.0
            && self.anomaly_ratio.0 <= self.anomaly_ratio.1
            && self.anomaly_ratio.1 <= MAX_ANOMALY_RATIO
            && self.scale_spread.0 > 0.0
            && self.scale_spread.0 <= self.scale_spread.1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("inconsistent synthetic ranges {self:?}")))
        }
    }

    /// Draws a spec. Sizes are log-uniform; the anomaly mix follows one of
    /// four regimes (global-, local- or collective-heavy, or mixed), and
    /// local-heavy datasets get at least two clusters of differing scale.
    pub fn sample(&self, seed: RngSeed) -> SynthSpec {
        let mut rng = seed.rng();
        let log_uniform = |rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)| -> usize {
            let v = rng.random_range((lo as f64).ln()..=(hi as f64).ln()).exp().round() as usize;
            v.clamp(lo, hi)
        };
        let n = log_uniform(&mut rng, self.n_rows);
        let k = log_uniform(&mut rng, self.k_features);
        let regime = rng.random_range(0..4usize);
        let mut mix = [0.0; 3];
        if regime < 3 {
            let dominant = rng.random_range(0.6..=1.0);
            let rest = 1.0 - dominant;
            let share = rng.random::<f64>();
            mix[regime] = dominant;
            mix[(regime + 1) % 3] = rest * share;
            mix[(regime + 2) % 3] = rest * (1.0 - share);
        } else {
            let e: [f64; 3] = std::array::from_fn(|_| Exp1.sample(&mut rng));
            let s: f64 = e.iter().sum();
            mix = e.map(|v| v / s);
        }
        // renormalize so the sum is exactly representable as 1 within rounding
        let s: f64 = mix.iter().sum();
        mix = mix.map(|v| v / s);
        let needs_structure = mix[1] > 0.0;
        let mut clusters = rng.random_range(self.n_clusters.0..=self.n_clusters.1);
        let mut spread = rng.random_range(self.scale_spread.0..=self.scale_spread.1);
        if needs_structure {
            clusters = clusters.max(2.min(self.n_clusters.1));
            spread = spread.max(self.scale_spread.1.min(2.5));
        }
        let ratio = rng.random_range(self.anomaly_ratio.0..=self.anomaly_ratio.1);
        let n_anomalies = ((n as f64 * ratio).round() as usize).max(1);
        SynthSpec {
            n_inliers: n - n_anomalies,
            n_anomalies,
            k_features: k,
            n_clusters: clusters,
            anomaly_mix: mix,
            scale_spread: spread,
            seed: seed.derive(0),
        }
    }
}

/// Manifest line for one generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub spec: SynthSpec,
}

#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub corpus: Corpus,
    pub manifest: Vec<ManifestEntry>,
}

/// Name of dataset `index` in a generated corpus.
pub fn dataset_name(index: usize) -> String {
    format!("synth_{index:04}")
}

/// Generates `n_datasets` datasets in parallel. Dataset `i` draws its spec
/// from stream `i` of `base_seed`; an infeasible draw is replaced by a fresh
/// draw from a further derived stream.
pub fn generate_corpus(n_datasets: usize, base_seed: RngSeed, ranges: &SynthRanges) -> Result<GeneratedCorpus> {
    if n_datasets == 0 {
        return Err(Error::InvalidArgument("n_datasets must be at least 1".into()));
    }
    ranges.validate()?;
    let generated: Vec<(Dataset, ManifestEntry)> = (0..n_datasets)
        .into_par_iter()
        .map(|i| {
            let stream = base_seed.derive(i as u64);
            let mut last = None;
            for attempt in 0..CORPUS_RETRIES {
                let spec = ranges.sample(stream.derive(attempt));
                match generate_dataset(&spec) {
                    Ok(d) => {
                        let name = dataset_name(i);
                        return Ok((d.with_name(name.clone()), ManifestEntry { name, spec }));
                    }
                    Err(e @ Error::InfeasibleSpec(_)) => {
                        log::debug!("dataset {i} attempt {attempt}: {e}");
                        last = Some(e);
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(last.unwrap_or_else(|| Error::InfeasibleSpec("no attempts made".into())))
        })
        .collect::<Result<_>>()?;
    let (datasets, manifest): (Vec<_>, Vec<_>) = generated.into_iter().unzip();
    Ok(GeneratedCorpus {
        corpus: Corpus::new(datasets)?,
        manifest,
    })
}

pub fn write_manifest(path: &Path, manifest: &[ManifestEntry]) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
