//! Base unsupervised detectors. Every detector maps a dataset to one score
//! per row, higher meaning more anomalous.

mod abod;
mod copod;
mod hbos;
mod iforest;
mod knn;
mod pca;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, RngSeed};
use crate::error::{Error, Result};

pub use abod::abod_scores;
pub use copod::copod_scores;
pub use hbos::hbos_scores;
pub use iforest::{average_path_length, iforest_scores};
pub use knn::{knn_scores, lof_scores, KnnMethod};
pub use pca::{pca_scores, PCA_VARIANCE_TARGET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DetectorId {
    Lof,
    Knn,
    Kthnn,
    Hbos,
    Iforest,
    Pca,
    Copod,
    Abod,
}

impl DetectorId {
    pub const ALL: [DetectorId; 8] = [
        DetectorId::Lof,
        DetectorId::Knn,
        DetectorId::Kthnn,
        DetectorId::Hbos,
        DetectorId::Iforest,
        DetectorId::Pca,
        DetectorId::Copod,
        DetectorId::Abod,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorId::Lof => "LOF",
            DetectorId::Knn => "KNN",
            DetectorId::Kthnn => "KTHNN",
            DetectorId::Hbos => "HBOS",
            DetectorId::Iforest => "IFOREST",
            DetectorId::Pca => "PCA",
            DetectorId::Copod => "COPOD",
            DetectorId::Abod => "ABOD",
        }
    }

    fn allowed_params(self) -> &'static [&'static str] {
        match self {
            DetectorId::Lof => &["n_neighbors", "distance"],
            DetectorId::Knn | DetectorId::Kthnn => &["n_neighbors", "method"],
            DetectorId::Hbos => &["n_bins", "tolerance"],
            DetectorId::Iforest => &["n_estimators", "max_features"],
            DetectorId::Pca => &["n_components", "svd_solver"],
            DetectorId::Copod => &[],
            DetectorId::Abod => &["n_neighbors"],
        }
    }
}

impl fmt::Display for DetectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.to_ascii_uppercase();
        DetectorId::ALL
            .into_iter()
            .find(|d| d.as_str() == upper)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown detector '{s}'")))
    }
}

/// A parameter value as it appears in JSON configs or `key=value` flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Number(f64),
    Text(String),
}

impl ParamValue {
    /// Numbers stay numbers; anything else is text.
    pub fn parse(raw: &str) -> Self {
        match raw.trim().parse::<f64>() {
            Ok(v) => ParamValue::Number(v),
            Err(_) => ParamValue::Text(raw.trim().to_string()),
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Number(v) => write!(f, "{v}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

/// A detector plus its parameters. Missing parameters take the defaults
/// `n_neighbors=60`, `n_bins=90`, `tolerance=0.5`, `n_estimators=100`,
/// `max_features=1.0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub id: DetectorId,
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
    #[serde(default)]
    pub seed: u64,
}

/// Fully resolved, validated detector settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectorConfig {
    Lof { k: usize },
    Knn { k: usize, method: KnnMethod },
    Hbos { n_bins: usize },
    Iforest { n_estimators: usize, max_features: f64, seed: RngSeed },
    Pca { n_components: Option<usize> },
    Copod,
    Abod { k: usize },
}

impl DetectorSpec {
    pub fn new(id: DetectorId) -> Self {
        DetectorSpec {
            id,
            params: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn with_param(mut self, key: &str, value: ParamValue) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The eight-detector default set with the given iForest seed.
    pub fn default_set(seed: u64) -> Vec<DetectorSpec> {
        DetectorId::ALL
            .into_iter()
            .map(|id| DetectorSpec::new(id).with_seed(seed))
            .collect()
    }

    fn number(&self, key: &str, default: f64) -> Result<f64> {
        match self.params.get(key) {
            None => Ok(default),
            Some(ParamValue::Number(v)) if v.is_finite() => Ok(*v),
            Some(other) => Err(self.bad_param(key, other)),
        }
    }

    fn count(&self, key: &str, default: usize, min: usize) -> Result<usize> {
        let v = self.number(key, default as f64)?;
        if v.fract() != 0.0 || v < min as f64 {
            return Err(self.bad_param(key, &ParamValue::Number(v)));
        }
        Ok(v as usize)
    }

    fn text<'a>(&'a self, key: &str, default: &'a str) -> Result<&'a str> {
        match self.params.get(key) {
            None => Ok(default),
            Some(ParamValue::Text(s)) => Ok(s.as_str()),
            Some(other) => Err(self.bad_param(key, other)),
        }
    }

    fn bad_param(&self, key: &str, value: &ParamValue) -> Error {
        Error::InvalidArgument(format!("{}: invalid value '{value}' for parameter '{key}'", self.id))
    }

    /// Checks parameter keys and values and resolves defaults.
    pub fn validate(&self) -> Result<DetectorConfig> {
        let allowed = self.id.allowed_params();
        if let Some(key) = self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::InvalidArgument(format!(
                "{}: unknown parameter '{key}' (allowed: {})",
                self.id,
                allowed.join(", ")
            )));
        }
        Ok(match self.id {
            DetectorId::Lof => {
                let distance = self.text("distance", "euclidean")?;
                if distance != "euclidean" {
                    return Err(self.bad_param("distance", &ParamValue::Text(distance.into())));
                }
                DetectorConfig::Lof {
                    k: self.count("n_neighbors", 60, 1)?,
                }
            }
            DetectorId::Knn | DetectorId::Kthnn => {
                let default = if self.id == DetectorId::Knn { "mean" } else { "largest" };
                let method = match self.text("method", default)? {
                    "mean" => KnnMethod::Mean,
                    "largest" => KnnMethod::Largest,
                    other => return Err(self.bad_param("method", &ParamValue::Text(other.into()))),
                };
                DetectorConfig::Knn {
                    k: self.count("n_neighbors", 60, 1)?,
                    method,
                }
            }
            DetectorId::Hbos => {
                // tolerance is accepted for config compatibility and has no effect
                self.number("tolerance", 0.5)?;
                DetectorConfig::Hbos {
                    n_bins: self.count("n_bins", 90, 2)?,
                }
            }
            DetectorId::Iforest => {
                let max_features = self.number("max_features", 1.0)?;
                if !(max_features > 0.0 && max_features <= 1.0) {
                    return Err(self.bad_param("max_features", &ParamValue::Number(max_features)));
                }
                DetectorConfig::Iforest {
                    n_estimators: self.count("n_estimators", 100, 1)?,
                    max_features,
                    seed: RngSeed(self.seed),
                }
            }
            DetectorId::Pca => {
                let solver = self.text("svd_solver", "full")?;
                if solver != "full" {
                    return Err(self.bad_param("svd_solver", &ParamValue::Text(solver.into())));
                }
                let n_components = match self.params.get("n_components") {
                    None => None,
                    Some(ParamValue::Text(s)) if s == "mle" => None,
                    Some(_) => Some(self.count("n_components", 1, 1)?),
                };
                DetectorConfig::Pca { n_components }
            }
            DetectorId::Copod => DetectorConfig::Copod,
            DetectorId::Abod => DetectorConfig::Abod {
                k: self.count("n_neighbors", 60, 2)?,
            },
        })
    }
}

/// Per-row anomaly scores, higher is more anomalous.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyScores(pub Vec<f64>);

impl AnomalyScores {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn finite(id: DetectorId, scores: Vec<f64>) -> Result<AnomalyScores> {
    if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::Detector {
            detector: id.to_string(),
            message: format!("non-finite score at row {i}"),
        });
    }
    Ok(AnomalyScores(scores))
}

/// Runs the detector described by `spec`. Failures come back as typed errors.
pub fn run_detector(spec: &DetectorSpec, dataset: &Dataset) -> Result<AnomalyScores> {
    let scores = match spec.validate()? {
        DetectorConfig::Lof { k } => lof_scores(dataset, k)?,
        DetectorConfig::Knn { k, method } => knn_scores(dataset, k, method)?,
        DetectorConfig::Hbos { n_bins } => hbos_scores(dataset, n_bins)?,
        DetectorConfig::Iforest {
            n_estimators,
            max_features,
            seed,
        } => iforest_scores(dataset, n_estimators, max_features, seed)?,
        DetectorConfig::Pca { n_components } => pca::pca_scores_with(dataset, n_components)?,
        DetectorConfig::Copod => copod_scores(dataset)?,
        DetectorConfig::Abod { k } => abod_scores(dataset, k)?,
    };
    finite(spec.id, scores.0)
}

/// Anything that can score a dataset; the performance matrix runs over these.
pub trait ScoreDetector: Sync {
    fn name(&self) -> String;
    fn score(&self, dataset: &Dataset) -> Result<AnomalyScores>;
}

impl ScoreDetector for DetectorSpec {
    fn name(&self) -> String {
        self.id.to_string()
    }

    fn score(&self, dataset: &Dataset) -> Result<AnomalyScores> {
        run_detector(self, dataset)
    }
}

/// Reads a detector config: a JSON list of `{id, params, seed}`.
pub fn read_detector_config(path: &std::path::Path) -> Result<Vec<DetectorSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let specs: Vec<DetectorSpec> = serde_json::from_str(&text)?;
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

pub(crate) fn require_rows(dataset: &Dataset, min: usize, what: &'static str) -> Result<()> {
    if dataset.n_rows() < min {
        return Err(Error::TooFewRows {
            what,
            required: min,
            actual: dataset.n_rows(),
        });
    }
    Ok(())
}
