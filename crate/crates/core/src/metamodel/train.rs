//! Backpropagation, Adam and early-stopped training.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{EpochLog, Layer, MetaModel, MlpConfig, Mode, Scaler, TrainingLog};
use crate::data::RngSeed;
use crate::error::{Error, Result};
use crate::metrics::Metric;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Feature rows with (possibly missing) per-detector targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<Vec<Option<f64>>>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    fn observed(&self) -> usize {
        self.targets.iter().flatten().filter(|t| t.is_some()).count()
    }
}

pub(super) struct ForwardCache {
    /// Input to each layer; `acts[0]` is the standardized feature vector.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    /// Dropout multipliers of the hidden layers (0 or 1/(1-p); 1 in inference).
    masks: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub(super) fn forward_pass(model: &MetaModel, features: &[f64], mut mode: Mode<'_>) -> ForwardCache {
    let p = model.config.dropout;
    let keep_scale = 1.0 / (1.0 - p);
    let mut acts = vec![model.scaler.transform(features)];
    let mut pre = Vec::new();
    let mut masks = Vec::new();
    let last = model.layers.len() - 1;
    for (l, layer) in model.layers.iter().enumerate() {
        let z = layer.affine(&acts[l]);
        if l == last {
            return ForwardCache {
                acts,
                pre,
                masks,
                output: z,
            };
        }
        let mask: Vec<f64> = match &mut mode {
            Mode::Train(rng) if p > 0.0 => z
                .iter()
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep_scale })
                .collect(),
            _ => vec![1.0; z.len()],
        };
        let a = z.iter().zip(&mask).map(|(v, m)| v.max(0.0) * m).collect();
        pre.push(z);
        masks.push(mask);
        acts.push(a);
    }
    unreachable!("a model always has an output layer")
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Layer>);

impl Gradients {
    fn zeros_like(model: &MetaModel) -> Self {
        Gradients(model.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect())
    }
}

/// Accumulates `∂loss/∂θ` for one sample given `∂loss/∂output`.
fn backward(model: &MetaModel, cache: &ForwardCache, d_output: Vec<f64>, grads: &mut Gradients) {
    let mut delta = d_output;
    for l in (0..model.layers.len()).rev() {
        let layer = &model.layers[l];
        let input = &cache.acts[l];
        let g = &mut grads.0[l];
        for (o, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            g.bias[o] += d;
            let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
            for (w, x) in row.iter_mut().zip(input) {
                *w += d * x;
            }
        }
        if l == 0 {
            break;
        }
        let mut prev = vec![0.0; layer.inputs];
        for (o, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
            for (p, w) in prev.iter_mut().zip(row) {
                *p += d * w;
            }
        }
        let h = l - 1;
        for ((p, z), m) in prev.iter_mut().zip(&cache.pre[h]).zip(&cache.masks[h]) {
            if *z <= 0.0 {
                *p = 0.0;
            } else {
                *p *= m;
            }
        }
        delta = prev;
    }
}

/// Sum of squared errors over observed targets and the observed count.
fn squared_error(output: &[f64], targets: &[Option<f64>]) -> (f64, usize) {
    output
        .iter()
        .zip(targets)
        .filter_map(|(y, t)| t.map(|t| (y - t) * (y - t)))
        .fold((0.0, 0), |(s, c), e| (s + e, c + 1))
}

/// Masked mean squared error in inference mode.
pub(super) fn masked_mse(model: &MetaModel, set: &TrainingSet) -> f64 {
    let (sum, count) = set
        .features
        .iter()
        .zip(&set.targets)
        .map(|(x, t)| squared_error(&forward_pass(model, x, Mode::Infer).output, t))
        .fold((0.0, 0), |(s, c), (e, n)| (s + e, c + n));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Gradient of the single-sample MSE `mean_j (y_j - t_j)²` without dropout.
pub fn loss_gradient(model: &MetaModel, features: &[f64], targets: &[f64]) -> Result<Gradients> {
    let targets: Vec<Option<f64>> = targets.iter().copied().map(Some).collect();
    masked_loss_gradient(model, features, &targets)
}

/// Gradient of the single-sample MSE over the observed targets only, without
/// dropout. Missing targets contribute nothing.
pub fn masked_loss_gradient(model: &MetaModel, features: &[f64], targets: &[Option<f64>]) -> Result<Gradients> {
    if features.len() != model.n_features || targets.len() != model.n_outputs() {
        return Err(Error::DimensionMismatch("features/targets do not match the model".into()));
    }
    let cache = forward_pass(model, features, Mode::Infer);
    let observed = targets.iter().filter(|t| t.is_some()).count().max(1) as f64;
    let d_output = cache
        .output
        .iter()
        .zip(targets)
        .map(|(y, t)| t.map_or(0.0, |t| 2.0 * (y - t) / observed))
        .collect();
    let mut grads = Gradients::zeros_like(model);
    backward(model, &cache, d_output, &mut grads);
    Ok(grads)
}

/// Inference-mode masked MSE of `model` on `set` (the monitored training quantity).
pub fn evaluate_loss(model: &MetaModel, set: &TrainingSet) -> Result<f64> {
    check_set(set, model.n_features, model.n_outputs(), "evaluation set")?;
    Ok(masked_mse(model, set))
}

fn sample_loss(model: &MetaModel, features: &[f64], targets: &[f64]) -> f64 {
    let out = forward_pass(model, features, Mode::Infer).output;
    out.iter().zip(targets).map(|(y, t)| (y - t) * (y - t)).sum::<f64>() / targets.len() as f64
}

fn param_mut(model: &mut MetaModel, layer: usize, which: usize, i: usize) -> &mut f64 {
    if which == 0 {
        &mut model.layers[layer].weights[i]
    } else {
        &mut model.layers[layer].bias[i]
    }
}

/// Largest relative error `|a-n| / max(|a|, |n|, 1e-6)` between analytic and
/// central-difference gradients over every weight and bias.
pub fn gradient_check(model: &MetaModel, features: &[f64], targets: &[f64], epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {epsilon}")));
    }
    let analytic = loss_gradient(model, features, targets)?;
    let mut probe = model.clone();
    probe.config.dropout = 0.0;
    let mut worst = 0.0f64;
    for l in 0..probe.layers.len() {
        for which in 0..2 {
            let len = if which == 0 {
                probe.layers[l].weights.len()
            } else {
                probe.layers[l].bias.len()
            };
            for i in 0..len {
                let original = *param_mut(&mut probe, l, which, i);
                *param_mut(&mut probe, l, which, i) = original + epsilon;
                let up = sample_loss(&probe, features, targets);
                *param_mut(&mut probe, l, which, i) = original - epsilon;
                let down = sample_loss(&probe, features, targets);
                *param_mut(&mut probe, l, which, i) = original;
                let numeric = (up - down) / (2.0 * epsilon);
                let a = if which == 0 {
                    analytic.0[l].weights[i]
                } else {
                    analytic.0[l].bias[i]
                };
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    step: i32,
    lr: f64,
}

impl Adam {
    fn new(model: &MetaModel, lr: f64) -> Self {
        let zeros: Vec<Layer> = model.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            lr,
        }
    }

    fn update(&mut self, model: &mut MetaModel, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        let lr = self.lr;
        let apply = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            }
        };
        for (l, layer) in model.layers.iter_mut().enumerate() {
            apply(&mut layer.weights, &grads.0[l].weights, &mut self.m[l].weights, &mut self.v[l].weights);
            apply(&mut layer.bias, &grads.0[l].bias, &mut self.m[l].bias, &mut self.v[l].bias);
        }
    }
}

fn check_set(set: &TrainingSet, n_features: usize, n_outputs: usize, what: &str) -> Result<()> {
    if set.features.len() != set.targets.len() {
        return Err(Error::DimensionMismatch(format!("{what}: feature and target row counts differ")));
    }
    if set.features.iter().any(|r| r.len() != n_features) || set.targets.iter().any(|r| r.len() != n_outputs) {
        return Err(Error::DimensionMismatch(format!(
            "{what}: rows must have {n_features} features and {n_outputs} targets"
        )));
    }
    if set.features.iter().flatten().any(|v| !v.is_finite()) || set.targets.iter().flatten().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what}: non-finite value")));
    }
    Ok(())
}

/// Trains an MLP with masked MSE, Adam and mini-batches, stopping after
/// `patience` epochs without validation improvement and restoring the
/// best-validation weights. With an empty validation set the monitored
/// quantity is the inference-mode training loss.
pub fn train(
    train_set: &TrainingSet,
    val_set: &TrainingSet,
    detector_ids: Vec<String>,
    metric: Metric,
    config: &MlpConfig,
) -> Result<MetaModel> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let n_features = train_set.features[0].len();
    let n_outputs = detector_ids.len();
    check_set(train_set, n_features, n_outputs, "training set")?;
    check_set(val_set, n_features, n_outputs, "validation set")?;
    if train_set.observed() == 0 {
        return Err(Error::Training("every training target is missing".into()));
    }
    if !val_set.is_empty() && val_set.observed() == 0 {
        return Err(Error::Training("every validation target is missing".into()));
    }

    let seed = RngSeed(config.seed);
    let mut init_rng = seed.derive(0).rng();
    let mut shuffle_rng = seed.derive(1).rng();
    let mut dropout_rng = seed.derive(2).rng();

    let mut model = MetaModel::initialize(config.clone(), n_features, detector_ids, metric, &mut init_rng)?;
    model.scaler = Scaler::fit(&train_set.features);
    let monitored = if val_set.is_empty() { train_set } else { val_set };

    let mut adam = Adam::new(&model, config.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainingLog {
        best_val_loss: f64::INFINITY,
        ..TrainingLog::default()
    };
    let mut best_layers = model.layers.clone();
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut epoch_sum, mut epoch_count) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let mut grads = Gradients::zeros_like(&model);
            let caches: Vec<(ForwardCache, &Vec<Option<f64>>)> = batch
                .iter()
                .map(|&i| {
                    (
                        forward_pass(&model, &train_set.features[i], Mode::Train(&mut dropout_rng)),
                        &train_set.targets[i],
                    )
                })
                .collect();
            let observed: usize = caches.iter().map(|(_, t)| t.iter().filter(|v| v.is_some()).count()).sum();
            if observed == 0 {
                continue;
            }
            for (cache, targets) in &caches {
                let (sq, _) = squared_error(&cache.output, targets);
                epoch_sum += sq;
                let d_output = cache
                    .output
                    .iter()
                    .zip(targets.iter())
                    .map(|(y, t)| t.map_or(0.0, |t| 2.0 * (y - t) / observed as f64))
                    .collect();
                backward(&model, cache, d_output, &mut grads);
            }
            epoch_count += observed;
            adam.update(&mut model, &grads);
        }
        let train_loss = epoch_sum / epoch_count.max(1) as f64;
        let val_loss = masked_mse(&model, monitored);
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best_layers = model.layers.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    if !log.best_val_loss.is_finite() {
        return Err(Error::Training("validation loss never became finite".into()));
    }
    model.layers = best_layers;
    model.training_log = log;
    Ok(model)
}
