//! The offline workflow end to end: generate a corpus, featurize it, build
//! performance matrices, train the meta-model and evaluate its selections on
//! the test split against random and single-best baselines.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{read_split, split_corpus, write_split, Corpus, RngSeed, Split};
use crate::detectors::DetectorSpec;
use crate::error::{Error, Result};
use crate::matrix::{build_matrices, top_performance, PerformanceMatrix};
use crate::metafeatures::{extract, write_features_csv, MetaFeatureVector};
use crate::metamodel::{save_model, select_from_features, train, MetaModel, MlpConfig, SelectionReport, TrainingSet};
use crate::metrics::Metric;
use crate::stats::{compare_paired, compare_selectors, meta_error, ComparisonReport, SelectorComparison};
use crate::synth::{generate_corpus, write_manifest, SynthRanges};

/// Train/validation/test fractions.
pub const SPLIT_RATIOS: [f64; 3] = [0.60, 0.15, 0.25];
pub const LABEL_COLUMN: &str = "label";

/// Everything needed for a full offline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub n_datasets: usize,
    pub seed: u64,
    pub metric: Metric,
    pub ranges: SynthRanges,
    pub detectors: Vec<DetectorSpec>,
    pub mlp: MlpConfig,
    pub split_ratios: [f64; 3],
}

impl PipelineConfig {
    /// Defaults for everything but the output directory, size, seed and
    /// metric. Detector, split, training and baseline seeds derive from `seed`.
    pub fn new(out_dir: impl Into<PathBuf>, n_datasets: usize, seed: u64, metric: Metric) -> Self {
        let s = RngSeed(seed);
        PipelineConfig {
            out_dir: out_dir.into(),
            n_datasets,
            seed,
            metric,
            ranges: SynthRanges::default(),
            detectors: DetectorSpec::default_set(s.derive(1).0),
            mlp: MlpConfig {
                seed: s.derive(3).0,
                ..MlpConfig::default()
            },
            split_ratios: SPLIT_RATIOS,
        }
    }

    pub fn split_seed(&self) -> RngSeed {
        RngSeed(self.seed).derive(2)
    }

    pub fn baseline_seed(&self) -> RngSeed {
        RngSeed(self.seed).derive(4)
    }
}

/// Where each artifact of a run lives, relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelinePaths {
    pub corpus: PathBuf,
    pub manifest: PathBuf,
    pub features: PathBuf,
    pub detectors: PathBuf,
    pub matrix_auc: PathBuf,
    pub matrix_ap: PathBuf,
    pub missing: PathBuf,
    pub split: PathBuf,
    pub mlp_config: PathBuf,
    pub model: PathBuf,
    pub reports_meta: PathBuf,
    pub reports_random: PathBuf,
    pub reports_single_best: PathBuf,
    pub evaluation: PathBuf,
}

impl PipelinePaths {
    pub fn new(out: &Path) -> Self {
        PipelinePaths {
            corpus: out.join("corpus"),
            manifest: out.join("manifest.json"),
            features: out.join("features.csv"),
            detectors: out.join("detectors.json"),
            matrix_auc: out.join("yauc.csv"),
            matrix_ap: out.join("yap.csv"),
            missing: out.join("missing.json"),
            split: out.join("splits.json"),
            mlp_config: out.join("mlp.json"),
            model: out.join("model.json"),
            reports_meta: out.join("reports_meta.json"),
            reports_random: out.join("reports_random.json"),
            reports_single_best: out.join("reports_single_best.json"),
            evaluation: out.join("evaluation.json"),
        }
    }

    /// Files whose bytes must not change between identical runs.
    pub fn deterministic_files(&self) -> Vec<&Path> {
        vec![
            &self.manifest,
            &self.features,
            &self.detectors,
            &self.matrix_auc,
            &self.matrix_ap,
            &self.missing,
            &self.split,
            &self.mlp_config,
            &self.model,
            &self.reports_meta,
            &self.reports_random,
            &self.reports_single_best,
            &self.evaluation,
        ]
    }
}

/// A failure tagged with the stage that produced it.
#[derive(Debug, thiserror::Error)]
#[error("stage '{stage}' failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

trait StageContext<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::NotFound(path.display().to_string()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_reports(path: &Path, reports: &[SelectionReport]) -> Result<()> {
    write_json(path, reports)
}

pub fn read_reports(path: &Path) -> Result<Vec<SelectionReport>> {
    read_json(path)
}

/// Meta-features of every dataset, in corpus order.
pub fn featurize_corpus(corpus: &Corpus) -> Result<Vec<(String, MetaFeatureVector)>> {
    corpus
        .datasets()
        .par_iter()
        .map(|d| {
            extract(d).map(|f| (d.name().to_string(), f)).inspect_err(|e| {
                log::error!("meta-features of dataset '{}': {e}", d.name());
            })
        })
        .collect()
}

/// Pairs the feature rows and matrix rows of the named datasets.
pub fn training_set(
    features: &BTreeMap<String, MetaFeatureVector>,
    matrix: &PerformanceMatrix,
    names: &[String],
) -> Result<TrainingSet> {
    let mut set = TrainingSet::default();
    for name in names {
        let f = features
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("meta-features for dataset '{name}'")))?;
        let row = matrix
            .row(name)
            .ok_or_else(|| Error::NotFound(format!("dataset '{name}' in the performance matrix")))?;
        set.features.push(f.0.to_vec());
        set.targets.push(row.to_vec());
    }
    Ok(set)
}

/// Names of the datasets in each split, in the matrix's row order.
pub fn split_names(matrix: &PerformanceMatrix, split: &BTreeMap<String, Split>, which: Split) -> Vec<String> {
    matrix
        .dataset_names
        .iter()
        .filter(|n| split.get(n.as_str()) == Some(&which))
        .cloned()
        .collect()
}

/// Trains on the train split, monitoring the validation split.
pub fn train_meta_model(
    features: &BTreeMap<String, MetaFeatureVector>,
    matrix: &PerformanceMatrix,
    split: &BTreeMap<String, Split>,
    config: &MlpConfig,
) -> Result<MetaModel> {
    let train_set = training_set(features, matrix, &split_names(matrix, split, Split::Train))?;
    let val_set = training_set(features, matrix, &split_names(matrix, split, Split::Val))?;
    train(&train_set, &val_set, matrix.detector_ids.clone(), matrix.metric, config)
}

/// Meta-model selections for the named datasets, predictions ranked best first.
pub fn select_all(
    model: &MetaModel,
    features: &BTreeMap<String, MetaFeatureVector>,
    names: &[String],
) -> Result<Vec<SelectionReport>> {
    names
        .iter()
        .map(|n| {
            let f = features
                .get(n)
                .ok_or_else(|| Error::NotFound(format!("meta-features for dataset '{n}'")))?;
            select_from_features(model, n, f).map(SelectionReport::into_ranked)
        })
        .collect()
}

fn fixed_report(dataset: &str, detector: &str) -> SelectionReport {
    SelectionReport {
        dataset: dataset.to_string(),
        predicted: Vec::new(),
        selected: detector.to_string(),
        selected_predicted: f64::NAN,
    }
}

/// Detector with the best column mean over `names`; ties go to the earlier detector.
pub fn single_best_detector(matrix: &PerformanceMatrix, names: &[String]) -> Result<String> {
    let means = matrix.column_means(names);
    let mut best: Option<(usize, f64)> = None;
    for (j, m) in means.iter().enumerate() {
        if let Some(m) = *m {
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((j, m));
            }
        }
    }
    best.map(|(j, _)| matrix.detector_ids[j].clone())
        .ok_or_else(|| Error::UndefinedMetric("no detector has a measured value".into()))
}

/// Always picks `detector`.
pub fn constant_reports(names: &[String], detector: &str) -> Vec<SelectionReport> {
    names.iter().map(|n| fixed_report(n, detector)).collect()
}

/// Picks uniformly among the measured detectors of each row.
pub fn random_reports(matrix: &PerformanceMatrix, names: &[String], seed: RngSeed) -> Result<Vec<SelectionReport>> {
    let mut rng = seed.rng();
    names
        .iter()
        .map(|n| {
            let row = matrix
                .row(n)
                .ok_or_else(|| Error::NotFound(format!("dataset '{n}' in the performance matrix")))?;
            let measured: Vec<usize> = (0..row.len()).filter(|&j| row[j].is_some()).collect();
            if measured.is_empty() {
                return Err(Error::UndefinedMetric(format!("every cell of row '{n}' is missing")));
            }
            let j = measured[rng.random_range(0..measured.len())];
            Ok(fixed_report(n, &matrix.detector_ids[j]))
        })
        .collect()
}

/// Expected performance of a uniformly random pick per row: the row mean
/// over measured cells.
pub fn expected_random_performance(matrix: &PerformanceMatrix, names: &[String]) -> Result<Vec<f64>> {
    names
        .iter()
        .map(|n| {
            let row = matrix
                .row(n)
                .ok_or_else(|| Error::NotFound(format!("dataset '{n}' in the performance matrix")))?;
            let vals: Vec<f64> = row.iter().flatten().copied().collect();
            if vals.is_empty() {
                return Err(Error::UndefinedMetric(format!("every cell of row '{n}' is missing")));
            }
            Ok(vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

/// Meta-learner against the expected value of uniform random selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRandomComparison {
    /// `a` = expected random performance, `b` = meta-learner.
    pub performance: ComparisonReport,
    /// `a` = expected random error, `b` = meta-learner error.
    pub error: ComparisonReport,
}

/// Test-split selection quality. In every comparison `a` is the baseline
/// and `b` the meta-learner, so a positive Cohen's d on the error view
/// favors the meta-learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metric: Metric,
    pub n_test: usize,
    pub single_best_detector: String,
    pub mean_performance_meta: f64,
    pub mean_performance_random: f64,
    pub mean_performance_single_best: f64,
    pub mean_performance_oracle: f64,
    pub mean_error_meta: f64,
    pub mean_error_random: f64,
    pub mean_error_single_best: f64,
    pub vs_random_expected: ExpectedRandomComparison,
    pub vs_random_draw: SelectorComparison,
    pub vs_single_best: SelectorComparison,
}

/// Compares meta-learner reports against the random and single-best baselines.
pub fn evaluate_selections(
    matrix: &PerformanceMatrix,
    meta: &[SelectionReport],
    random: &[SelectionReport],
    single_best: &[SelectionReport],
) -> Result<Evaluation> {
    let names: Vec<String> = meta.iter().map(|r| r.dataset.clone()).collect();
    let vs_random_draw = compare_selectors(matrix, random, meta)?;
    let vs_single_best = compare_selectors(matrix, single_best, meta)?;
    let single = single_best
        .first()
        .map(|r| r.selected.clone())
        .ok_or_else(|| Error::InvalidArgument("no test datasets to evaluate".into()))?;

    let expected = expected_random_performance(matrix, &names)?;
    let tops: Vec<f64> = names
        .iter()
        .map(|n| top_performance(matrix, n).map(|t| t.1))
        .collect::<Result<_>>()?;
    let expected_err: Vec<f64> = tops.iter().zip(&expected).map(|(t, e)| meta_error(*t, *e)).collect();
    let meta_perf: Vec<f64> = vs_random_draw.datasets.iter().map(|r| r.performance_b).collect();
    let meta_err: Vec<f64> = vs_random_draw.datasets.iter().map(|r| r.error_b).collect();
    let vs_random_expected = ExpectedRandomComparison {
        performance: compare_paired(&expected, &meta_perf)?,
        error: compare_paired(&expected_err, &meta_err)?,
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(Evaluation {
        metric: matrix.metric,
        n_test: names.len(),
        single_best_detector: single,
        mean_performance_meta: vs_random_expected.performance.mean_b,
        mean_performance_random: vs_random_expected.performance.mean_a,
        mean_performance_single_best: vs_single_best.performance.mean_a,
        mean_performance_oracle: mean(&tops),
        mean_error_meta: vs_random_expected.error.mean_b,
        mean_error_random: vs_random_expected.error.mean_a,
        mean_error_single_best: vs_single_best.error.mean_a,
        vs_random_expected,
        vs_random_draw,
        vs_single_best,
    })
}

/// Result of [`run_pipeline`]. Timings are wall clock and never written to disk.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub paths: PipelinePaths,
    pub model: MetaModel,
    pub evaluation: Evaluation,
    pub timings: Vec<(&'static str, Duration)>,
}

fn timed<T>(
    timings: &mut Vec<(&'static str, Duration)>,
    stage: &'static str,
    f: impl FnOnce() -> Result<T>,
) -> std::result::Result<T, StageError> {
    let start = Instant::now();
    let out = f().stage(stage)?;
    let elapsed = start.elapsed();
    log::info!("stage {stage} finished in {elapsed:.2?}");
    timings.push((stage, elapsed));
    Ok(out)
}

/// Runs synth → featurize → matrix → split → train → select → evaluate,
/// writing every artifact under `config.out_dir`.
pub fn run_pipeline(config: &PipelineConfig) -> std::result::Result<PipelineOutcome, StageError> {
    let paths = PipelinePaths::new(&config.out_dir);
    let mut t = Vec::new();

    let corpus = timed(&mut t, "synth", || {
        fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
        let generated = generate_corpus(config.n_datasets, RngSeed(config.seed), &config.ranges)?;
        if paths.corpus.exists() {
            fs::remove_dir_all(&paths.corpus).map_err(|e| Error::io(&paths.corpus, e))?;
        }
        generated.corpus.write_dir(&paths.corpus, LABEL_COLUMN)?;
        write_manifest(&paths.manifest, &generated.manifest)?;
        Ok(generated.corpus)
    })?;

    let features = timed(&mut t, "featurize", || {
        let rows = featurize_corpus(&corpus)?;
        write_features_csv(&paths.features, &rows)?;
        Ok(rows.into_iter().collect::<BTreeMap<_, _>>())
    })?;

    let matrix = timed(&mut t, "matrix", || {
        write_json(&paths.detectors, &config.detectors)?;
        let build = build_matrices(&corpus, &config.detectors)?;
        build.auc.write_csv(&paths.matrix_auc)?;
        build.ap.write_csv(&paths.matrix_ap)?;
        write_json(&paths.missing, &build.missing)?;
        Ok(match config.metric {
            Metric::Auc => build.auc,
            Metric::Ap => build.ap,
        })
    })?;

    let split = timed(&mut t, "split", || {
        let corpus = split_corpus(corpus.clone(), config.split_ratios, config.split_seed())?;
        let split = corpus.split_assignment().cloned().unwrap_or_default();
        write_split(&paths.split, &split)?;
        // read back so later stages see exactly what a separate run would
        read_split(&paths.split)
    })?;

    let model = timed(&mut t, "train", || {
        write_json(&paths.mlp_config, &config.mlp)?;
        let model = train_meta_model(&features, &matrix, &split, &config.mlp)?;
        save_model(&model, &paths.model)?;
        Ok(model)
    })?;

    let test = split_names(&matrix, &split, Split::Test);
    let (meta, random, single) = timed(&mut t, "select", || {
        let meta = select_all(&model, &features, &test)?;
        let random = random_reports(&matrix, &test, config.baseline_seed())?;
        let best = single_best_detector(&matrix, &split_names(&matrix, &split, Split::Train))?;
        let single = constant_reports(&test, &best);
        write_reports(&paths.reports_meta, &meta)?;
        write_reports(&paths.reports_random, &random)?;
        write_reports(&paths.reports_single_best, &single)?;
        Ok((meta, random, single))
    })?;

    let evaluation = timed(&mut t, "evaluate", || {
        let e = evaluate_selections(&matrix, &meta, &random, &single)?;
        write_json(&paths.evaluation, &e)?;
        Ok(e)
    })?;

    Ok(PipelineOutcome {
        paths,
        model,
        evaluation,
        timings: t,
    })
}
