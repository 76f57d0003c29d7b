//! Meta-learned selection of unsupervised anomaly detectors.
//!
//! Given an unlabeled tabular dataset, [`metafeatures::extract`] summarises it
//! into 19 distance-profile statistics and a trained [`metamodel::MetaModel`]
//! predicts how well each registered detector would perform, picking the
//! best. Offline, [`matrix::build_matrices`] measures detector AUC/AP over a
//! labeled corpus (for instance one made by [`synth`]) to produce the
//! training targets.

pub mod data;
pub mod detectors;
pub mod error;
pub mod matrix;
pub mod metafeatures;
pub mod metamodel;
pub mod metrics;
pub mod neighbors;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use data::{load_dataset, load_dataset_detect_label, Corpus, Dataset, RngSeed, Split};
pub use detectors::{run_detector, AnomalyScores, DetectorId, DetectorSpec};
pub use error::{Error, Result};
pub use metafeatures::{extract, MetaFeatureVector};
pub use metrics::Metric;
