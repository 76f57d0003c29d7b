//! MLP meta-model: predicts per-detector performance from meta-features and
//! selects the detector with the highest prediction.

mod train;

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metafeatures::{extract, MetaFeatureVector};
use crate::metrics::Metric;

pub use train::{evaluate_loss, gradient_check, loss_gradient, masked_loss_gradient, train, Gradients, TrainingSet};

const MODEL_FORMAT: &str = "anomsel-metamodel";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![64, 64, 32],
            dropout: 0.2,
            max_epochs: 1000,
            batch_size: 32,
            patience: 50,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden layers must be nonempty and nonzero".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument("batch_size and max_epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Dense layer; `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Layer {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b)
            .collect()
    }
}

/// Z-score standardization fitted on training meta-features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features with zero training variance; their std is stored as 1.
    pub constant: Vec<bool>,
}

impl Scaler {
    pub fn identity(n: usize) -> Self {
        Scaler {
            mean: vec![0.0; n],
            std: vec![1.0; n],
            constant: vec![false; n],
        }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let k = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let mut std = Vec::with_capacity(k);
        let mut constant = Vec::with_capacity(k);
        for j in 0..k {
            let var = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            let flat = sd.is_nan() || sd <= 1e-12 * mean[j].abs().max(1.0);
            constant.push(flat);
            std.push(if flat { 1.0 } else { sd });
        }
        Scaler { mean, std, constant }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// A trained (or hand-built) meta-model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub config: MlpConfig,
    pub n_features: usize,
    pub detector_ids: Vec<String>,
    pub metric: Metric,
    pub scaler: Scaler,
    pub layers: Vec<Layer>,
    pub training_log: TrainingLog,
}

/// Forward-pass mode. Dropout only acts in `Train`.
pub enum Mode<'a> {
    Infer,
    Train(&'a mut ChaCha8Rng),
}

impl MetaModel {
    /// Randomly initialized network `n_features → hidden… → detector_ids.len()`.
    pub fn initialize(
        config: MlpConfig,
        n_features: usize,
        detector_ids: Vec<String>,
        metric: Metric,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if detector_ids.is_empty() || n_features == 0 {
            return Err(Error::InvalidArgument("model needs at least one input and one output".into()));
        }
        let mut dims = vec![n_features];
        dims.extend(&config.hidden);
        dims.push(detector_ids.len());
        let layers = dims.windows(2).map(|w| Layer::glorot(w[0], w[1], rng)).collect();
        Ok(MetaModel {
            config,
            n_features,
            detector_ids,
            metric,
            scaler: Scaler::identity(n_features),
            layers,
            training_log: TrainingLog::default(),
        })
    }

    pub fn n_outputs(&self) -> usize {
        self.detector_ids.len()
    }

    /// Checks that layer shapes chain `n_features → hidden… → L` and that
    /// every buffer has the right length.
    pub fn check_shapes(&self) -> Result<()> {
        let err = |m: String| Err(Error::Schema(m));
        if self.scaler.mean.len() != self.n_features
            || self.scaler.std.len() != self.n_features
            || self.scaler.constant.len() != self.n_features
        {
            return err(format!("scaler does not have {} entries", self.n_features));
        }
        if self.scaler.std.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return err("scaler std entries must be positive".into());
        }
        if self.layers.len() != self.config.hidden.len() + 1 {
            return err(format!(
                "{} layers for {} hidden sizes",
                self.layers.len(),
                self.config.hidden.len()
            ));
        }
        let mut expected_in = self.n_features;
        for (i, layer) in self.layers.iter().enumerate() {
            let expected_out = self.config.hidden.get(i).copied().unwrap_or(self.detector_ids.len());
            if layer.inputs != expected_in || layer.outputs != expected_out {
                return err(format!(
                    "layer {i} is {}→{}, expected {expected_in}→{expected_out}",
                    layer.inputs, layer.outputs
                ));
            }
            if layer.weights.len() != layer.inputs * layer.outputs || layer.bias.len() != layer.outputs {
                return err(format!("layer {i} buffers have the wrong length"));
            }
            expected_in = expected_out;
        }
        Ok(())
    }

    /// Predicted performance per detector.
    pub fn forward(&self, features: &[f64], mode: Mode<'_>) -> Result<Vec<f64>> {
        if features.len() != self.n_features {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} features, got {}",
                self.n_features,
                features.len()
            )));
        }
        Ok(train::forward_pass(self, features, mode).output)
    }

    pub fn predict(&self, features: &MetaFeatureVector) -> Result<Vec<f64>> {
        self.forward(features.as_slice(), Mode::Infer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub detector: String,
    pub predicted: f64,
}

/// Predicted performance of every detector and the argmax choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub dataset: String,
    pub predicted: Vec<Prediction>,
    pub selected: String,
    /// NaN (JSON `null`) for baseline reports that carry no prediction.
    #[serde(with = "nan_as_null")]
    pub selected_predicted: f64,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

impl SelectionReport {
    /// Builds a report from raw predictions; ties go to the earlier detector.
    pub fn from_predictions(dataset: &str, detector_ids: &[String], values: &[f64]) -> Result<Self> {
        if detector_ids.len() != values.len() || values.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} predictions for {} detectors",
                values.len(),
                detector_ids.len()
            )));
        }
        let mut best = 0;
        for (j, v) in values.iter().enumerate() {
            if *v > values[best] {
                best = j;
            }
        }
        Ok(SelectionReport {
            dataset: dataset.to_string(),
            predicted: detector_ids
                .iter()
                .zip(values)
                .map(|(d, v)| Prediction {
                    detector: d.clone(),
                    predicted: *v,
                })
                .collect(),
            selected: detector_ids[best].clone(),
            selected_predicted: values[best],
        })
    }

    /// The same report with `predicted` listed best first.
    pub fn into_ranked(self) -> Self {
        SelectionReport {
            predicted: self.ranking(),
            ..self
        }
    }

    /// Predictions sorted best first (stable on ties).
    pub fn ranking(&self) -> Vec<Prediction> {
        let mut r = self.predicted.clone();
        r.sort_by(|a, b| b.predicted.total_cmp(&a.predicted));
        r
    }
}

/// Selection from precomputed meta-features.
pub fn select_from_features(model: &MetaModel, dataset: &str, features: &MetaFeatureVector) -> Result<SelectionReport> {
    let predicted = model.predict(features)?;
    SelectionReport::from_predictions(dataset, &model.detector_ids, &predicted)
}

/// Extracts meta-features from `dataset` and picks the detector with the
/// highest predicted performance. Labels are ignored.
pub fn select(model: &MetaModel, dataset: &Dataset) -> Result<SelectionReport> {
    let features = extract(dataset)?;
    select_from_features(model, dataset.name(), &features)
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    model: MetaModel,
}

pub fn save_model(model: &MetaModel, path: &Path) -> Result<()> {
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        model: model.clone(),
    };
    let text = serde_json::to_string_pretty(&file)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<MetaModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(MODEL_FORMAT) => {}
        other => return Err(Error::Schema(format!("unexpected model format {other:?}"))),
    }
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(MODEL_VERSION) => {}
        other => {
            return Err(Error::Schema(format!(
                "unsupported model version {other:?} (expected {MODEL_VERSION})"
            )))
        }
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
    file.model.check_shapes()?;
    Ok(file.model)
}
