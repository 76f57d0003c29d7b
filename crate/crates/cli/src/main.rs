use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use anomsel::data::{read_split, Split};
use anomsel::detectors::{read_detector_config, ParamValue};
use anomsel::matrix::{build_matrices, PerformanceMatrix};
use anomsel::metafeatures::{read_features_map, write_features, write_features_csv};
use anomsel::metamodel::{load_model, save_model, select, MlpConfig, SelectionReport};
use anomsel::pipeline::{
    featurize_corpus, read_json, run_pipeline, select_all, train_meta_model, write_json, write_reports,
    PipelineConfig, LABEL_COLUMN,
};
use anomsel::stats::compare_selectors;
use anomsel::synth::{generate_corpus, write_manifest, SynthRanges};
use anomsel::{load_dataset_detect_label, run_detector, Corpus, DetectorId, DetectorSpec, Metric, RngSeed};

#[derive(Parser)]
#[command(name = "anomsel", version, about = "Pick an anomaly detector for a dataset from its meta-features")]
struct Cli {
    /// Print wall-clock time per stage to stderr.
    #[arg(long, global = true)]
    timing: bool,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RangeArgs {
    /// Smallest dataset size (rows).
    #[arg(long, default_value_t = 100)]
    min_rows: usize,
    /// Largest dataset size (rows).
    #[arg(long, default_value_t = 2000)]
    max_rows: usize,
    /// Smallest feature count.
    #[arg(long, default_value_t = 3)]
    min_features: usize,
    /// Largest feature count.
    #[arg(long, default_value_t = 50)]
    max_features: usize,
}

impl RangeArgs {
    fn ranges(&self) -> SynthRanges {
        SynthRanges {
            n_rows: (self.min_rows, self.max_rows),
            k_features: (self.min_features, self.max_features),
            ..SynthRanges::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic corpus: one CSV per dataset plus manifest.json.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        ranges: RangeArgs,
    },
    /// Extract the 19 meta-features of one CSV or of every CSV in a directory.
    Featurize {
        #[arg(long = "in", conflicts_with = "corpus", required_unless_present = "corpus")]
        input: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Column excluded from the features when present.
        #[arg(long, default_value = LABEL_COLUMN)]
        label_column: String,
    },
    /// Run one detector and write `row_index,score`.
    Score {
        #[arg(long)]
        detector: String,
        /// Detector parameter as key=value; repeatable.
        #[arg(long = "param")]
        params: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = LABEL_COLUMN)]
        label_column: String,
    },
    /// Evaluate every detector on every labeled dataset (AUC and AP matrices).
    Matrix {
        #[arg(long)]
        corpus: PathBuf,
        /// JSON list of {id, params, seed}; the eight defaults when omitted.
        #[arg(long)]
        detectors: Option<PathBuf>,
        #[arg(long)]
        out_auc: PathBuf,
        #[arg(long)]
        out_ap: PathBuf,
        /// Where to record failed cells as JSON.
        #[arg(long)]
        missing: Option<PathBuf>,
        /// Seed of the default detector set.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = LABEL_COLUMN)]
        label_column: String,
    },
    /// Train the meta-model on the train split, early-stopping on the val split.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// MLP config JSON; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "AUC")]
        metric: Metric,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank the detectors for a dataset, or for every dataset of a features CSV.
    Select {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in", conflicts_with = "features", required_unless_present = "features")]
        input: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        /// Restrict a features CSV to one split.
        #[arg(long, requires = "which")]
        split: Option<PathBuf>,
        #[arg(long, requires = "split")]
        which: Option<Split>,
        /// Output JSON; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = LABEL_COLUMN)]
        label_column: String,
    },
    /// Compare two selectors' reports against a performance matrix.
    Evaluate {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, default_value = "AUC")]
        metric: Metric,
        #[arg(long)]
        reports_a: PathBuf,
        #[arg(long)]
        reports_b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full offline sequence and evaluate on the test split.
    Pipeline {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "AUC")]
        metric: Metric,
        #[arg(long, default_value = "anomsel-run")]
        out: PathBuf,
        /// MLP config JSON overriding the defaults (its seed is used as given).
        #[arg(long)]
        mlp_config: Option<PathBuf>,
        /// Detector config JSON overriding the default set.
        #[arg(long)]
        detectors: Option<PathBuf>,
        #[command(flatten)]
        ranges: RangeArgs,
    },
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Featurize { .. } => "featurize",
            Command::Score { .. } => "score",
            Command::Matrix { .. } => "matrix",
            Command::Train { .. } => "train",
            Command::Select { .. } => "select",
            Command::Evaluate { .. } => "evaluate",
            Command::Pipeline { .. } => "pipeline",
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Every `*.csv` in `dir`, sorted, labels taken from `label_column` when present.
fn load_corpus(dir: &Path, label_column: &str) -> Result<Corpus> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no CSV files in {}", dir.display());
    }
    let datasets = paths
        .iter()
        .map(|p| load_dataset_detect_label(p, label_column).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus::new(datasets)?)
}

fn parse_params(raw: &[String]) -> Result<BTreeMap<String, ParamValue>> {
    raw.iter()
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| anyhow!("parameter '{kv}' is not of the form key=value"))?;
            Ok((k.trim().to_string(), ParamValue::parse(v)))
        })
        .collect()
}

/// A single report or a list of them.
#[derive(Deserialize)]
#[serde(untagged)]
enum Reports {
    Many(Vec<SelectionReport>),
    One(Box<SelectionReport>),
}

fn read_reports_any(path: &Path) -> Result<Vec<SelectionReport>> {
    Ok(match read_json::<Reports>(path)? {
        Reports::Many(v) => v,
        Reports::One(r) => vec![*r],
    })
}

fn run(command: Command, timing: bool) -> Result<()> {
    match command {
        Command::Synth { n, seed, out, ranges } => {
            let generated = generate_corpus(n, RngSeed(seed), &ranges.ranges())?;
            generated.corpus.write_dir(&out, LABEL_COLUMN)?;
            write_manifest(&out.join("manifest.json"), &generated.manifest)?;
            eprintln!("wrote {} datasets to {}", generated.corpus.len(), out.display());
        }
        Command::Featurize {
            input,
            corpus,
            out,
            label_column,
        } => {
            let corpus = match (input, corpus) {
                (Some(path), _) => Corpus::new(vec![load_dataset_detect_label(&path, &label_column)?])?,
                (None, Some(dir)) => load_corpus(&dir, &label_column)?,
                (None, None) => unreachable!("clap requires one input"),
            };
            let rows = featurize_corpus(&corpus)?;
            match out {
                Some(p) => write_features_csv(&p, &rows)?,
                None => write_features(std::io::stdout().lock(), &rows)?,
            }
        }
        Command::Score {
            detector,
            params,
            seed,
            input,
            out,
            label_column,
        } => {
            let id: DetectorId = detector.parse()?;
            let spec = DetectorSpec {
                id,
                params: parse_params(&params)?,
                seed,
            };
            spec.validate()?;
            let data = load_dataset_detect_label(&input, &label_column)?;
            let scores = run_detector(&spec, &data)?;
            let mut text = String::from("row_index,score\n");
            for (i, s) in scores.values().iter().enumerate() {
                writeln!(text, "{i},{s}")?;
            }
            emit(Some(&out), &text)?;
        }
        Command::Matrix {
            corpus,
            detectors,
            out_auc,
            out_ap,
            missing,
            seed,
            label_column,
        } => {
            let specs = match detectors {
                Some(p) => read_detector_config(&p)?,
                None => DetectorSpec::default_set(seed),
            };
            let corpus = load_corpus(&corpus, &label_column)?;
            let build = build_matrices(&corpus, &specs)?;
            build.auc.write_csv(&out_auc)?;
            build.ap.write_csv(&out_ap)?;
            if let Some(p) = missing {
                write_json(&p, &build.missing)?;
            }
            if !build.missing.is_empty() {
                eprintln!("{} matrix cells could not be measured", build.missing.len());
            }
        }
        Command::Train {
            features,
            targets,
            split,
            config,
            metric,
            out,
        } => {
            let config: MlpConfig = match config {
                Some(p) => read_json(&p)?,
                None => MlpConfig::default(),
            };
            let features = read_features_map(&features)?;
            let matrix = PerformanceMatrix::read_csv(&targets, metric)?;
            let split = read_split(&split)?;
            let model = train_meta_model(&features, &matrix, &split, &config)?;
            save_model(&model, &out)?;
            let log = &model.training_log;
            eprintln!(
                "trained {} epochs; best epoch {} with validation loss {:.6}",
                log.epochs.len(),
                log.best_epoch,
                log.best_val_loss
            );
        }
        Command::Select {
            model,
            input,
            features,
            split,
            which,
            out,
            label_column,
        } => {
            let model = load_model(&model)?;
            let text = if let Some(path) = input {
                let data = load_dataset_detect_label(&path, &label_column)?;
                serde_json::to_string_pretty(&select(&model, &data)?.into_ranked())?
            } else {
                let features = read_features_map(features.as_deref().expect("clap requires one input"))?;
                let mut names: Vec<String> = features.keys().cloned().collect();
                if let (Some(split), Some(which)) = (split, which) {
                    let split = read_split(&split)?;
                    names.retain(|n| split.get(n) == Some(&which));
                }
                let reports = select_all(&model, &features, &names)?;
                if let Some(p) = &out {
                    write_reports(p, &reports)?;
                    return Ok(());
                }
                serde_json::to_string_pretty(&reports)?
            };
            emit(out.as_deref(), &(text + "\n"))?;
        }
        Command::Evaluate {
            matrix,
            metric,
            reports_a,
            reports_b,
            out,
        } => {
            let matrix = PerformanceMatrix::read_csv(&matrix, metric)?;
            let a = read_reports_any(&reports_a)?;
            let b = read_reports_any(&reports_b)?;
            let report = compare_selectors(&matrix, &a, &b)?;
            write_json(&out, &report)?;
            println!(
                "performance: mean_a {:.4} mean_b {:.4} t {:.3} p {:.3e}",
                report.performance.mean_a, report.performance.mean_b, report.performance.t_statistic, report.performance.p_value
            );
            println!(
                "error: mean_a {:.4} mean_b {:.4} d {}",
                report.error.mean_a,
                report.error.mean_b,
                report.error.effect_size_d.map_or("undefined".into(), |d| format!("{d:.3}"))
            );
        }
        Command::Pipeline {
            n,
            seed,
            metric,
            out,
            mlp_config,
            detectors,
            ranges,
        } => {
            let mut config = PipelineConfig::new(&out, n, seed, metric);
            config.ranges = ranges.ranges();
            if let Some(p) = mlp_config {
                config.mlp = read_json(&p)?;
            }
            if let Some(p) = detectors {
                config.detectors = read_detector_config(&p)?;
            }
            let outcome = run_pipeline(&config)?;
            if timing {
                for (stage, d) in &outcome.timings {
                    eprintln!("timing {stage}: {:.3}s", d.as_secs_f64());
                }
            }
            let e = &outcome.evaluation;
            println!("test datasets: {}", e.n_test);
            println!(
                "mean {}: meta-learner {:.4}, random {:.4}, single-best ({}) {:.4}, oracle {:.4}",
                e.metric,
                e.mean_performance_meta,
                e.mean_performance_random,
                e.single_best_detector,
                e.mean_performance_single_best,
                e.mean_performance_oracle
            );
            println!(
                "mean error: meta-learner {:.4}, random {:.4}, single-best {:.4}",
                e.mean_error_meta, e.mean_error_random, e.mean_error_single_best
            );
            let r = &e.vs_random_expected;
            println!(
                "random vs meta-learner: t {:.3}, p {:.3e}, d(error) {}",
                r.performance.t_statistic,
                r.performance.p_value,
                r.error.effect_size_d.map_or("undefined".into(), |d| format!("{d:.3}"))
            );
            println!("evaluation written to {}", outcome.paths.evaluation.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let stage = cli.command.stage();
    let start = Instant::now();
    let result = run(cli.command, cli.timing);
    if cli.timing && stage != "pipeline" {
        eprintln!("timing {stage}: {:.3}s", start.elapsed().as_secs_f64());
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // pipeline errors already name the failing stage
            if stage == "pipeline" {
                eprintln!("error: {e:#}");
            } else {
                eprintln!("error: stage '{stage}' failed: {e:#}");
            }
            ExitCode::from(1)
        }
    }
}
