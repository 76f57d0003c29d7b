//! Detector performance matrices: every registered detector evaluated on
//! every labeled corpus dataset, one AUC matrix and one AP matrix.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Corpus;
use crate::detectors::ScoreDetector;
use crate::error::{Error, Result};
use crate::metrics::{auc, average_precision, Metric};

/// N datasets × L detectors of metric values; `None` marks a failed cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceMatrix {
    pub metric: Metric,
    pub detector_ids: Vec<String>,
    pub dataset_names: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

/// Why a cell was left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingCell {
    pub dataset: String,
    pub detector: String,
    pub metric: Option<Metric>,
    pub reason: String,
}

/// Output of [`build_matrices`].
#[derive(Debug, Clone)]
pub struct MatrixBuild {
    pub auc: PerformanceMatrix,
    pub ap: PerformanceMatrix,
    pub missing: Vec<MissingCell>,
}

impl PerformanceMatrix {
    pub fn new(
        metric: Metric,
        detector_ids: Vec<String>,
        dataset_names: Vec<String>,
        values: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        let unique = |v: &[String]| v.iter().collect::<HashSet<_>>().len() == v.len();
        if !unique(&detector_ids) || !unique(&dataset_names) {
            return Err(Error::InvalidArgument("matrix row/column labels must be unique".into()));
        }
        if values.len() != dataset_names.len() || values.iter().any(|r| r.len() != detector_ids.len()) {
            return Err(Error::DimensionMismatch("matrix shape does not match its labels".into()));
        }
        if values
            .iter()
            .flatten()
            .flatten()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::InvalidArgument("matrix values must lie in [0, 1]".into()));
        }
        Ok(PerformanceMatrix {
            metric,
            detector_ids,
            dataset_names,
            values,
        })
    }

    pub fn n_datasets(&self) -> usize {
        self.dataset_names.len()
    }

    pub fn n_detectors(&self) -> usize {
        self.detector_ids.len()
    }

    pub fn row_index(&self, dataset: &str) -> Option<usize> {
        self.dataset_names.iter().position(|d| d == dataset)
    }

    pub fn detector_index(&self, detector: &str) -> Option<usize> {
        self.detector_ids.iter().position(|d| d == detector)
    }

    pub fn row(&self, dataset: &str) -> Option<&[Option<f64>]> {
        self.row_index(dataset).map(|i| self.values[i].as_slice())
    }

    pub fn value(&self, dataset: &str, detector: &str) -> Option<f64> {
        let i = self.row_index(dataset)?;
        let j = self.detector_index(detector)?;
        self.values[i][j]
    }

    /// Mean of each column over the named rows, skipping missing cells.
    pub fn column_means(&self, datasets: &[String]) -> Vec<Option<f64>> {
        (0..self.n_detectors())
            .map(|j| {
                let vals: Vec<f64> = datasets
                    .iter()
                    .filter_map(|d| self.row_index(d))
                    .filter_map(|i| self.values[i][j])
                    .collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    }

    /// Writes `dataset,<detector ids...>` with empty cells for missing values.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["dataset".to_string()];
        header.extend(self.detector_ids.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.dataset_names.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path, metric: Metric) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.display().to_string()));
        }
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.is_empty() {
            return Err(Error::Schema(format!("{} has no header", path.display())));
        }
        let detector_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            names.push(rec[0].to_string());
            let cells = rec
                .iter()
                .skip(1)
                .enumerate()
                .map(|(j, cell)| {
                    if cell.trim().is_empty() {
                        Ok(None)
                    } else {
                        cell.trim().parse::<f64>().map(Some).map_err(|_| Error::Parse {
                            row,
                            column: detector_ids[j].clone(),
                            message: format!("'{cell}' is not a number"),
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            values.push(cells);
        }
        PerformanceMatrix::new(metric, detector_ids, names, values)
    }
}

/// Best measured cell of a row: `(detector, value)`, ties going to the
/// earlier detector, missing cells skipped.
pub fn top_performance(matrix: &PerformanceMatrix, dataset: &str) -> Result<(String, f64)> {
    let row = matrix
        .row(dataset)
        .ok_or_else(|| Error::NotFound(format!("dataset '{dataset}' in the performance matrix")))?;
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in row.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
    }
    best.map(|(j, v)| (matrix.detector_ids[j].clone(), v))
        .ok_or_else(|| Error::UndefinedMetric(format!("every cell of row '{dataset}' is missing")))
}

/// Runs every detector on every dataset and records AUC and AP.
///
/// A detector error or an undefined metric empties that single cell and is
/// logged in [`MatrixBuild::missing`]; the rest of the grid is unaffected.
pub fn build_matrices<D: ScoreDetector>(corpus: &Corpus, detectors: &[D]) -> Result<MatrixBuild> {
    if let Some(d) = corpus.datasets().iter().find(|d| d.labels().is_none()) {
        return Err(Error::InvalidArgument(format!(
            "dataset '{}' has no labels; performance matrices need labeled data",
            d.name()
        )));
    }
    let detector_ids: Vec<String> = detectors.iter().map(ScoreDetector::name).collect();
    let dataset_names: Vec<String> = corpus.datasets().iter().map(|d| d.name().to_string()).collect();
    let l = detectors.len();

    type Cell = (Option<f64>, Option<f64>, Vec<MissingCell>);
    let cells: Vec<Cell> = (0..corpus.len() * l)
        .into_par_iter()
        .map(|idx| {
            let dataset = &corpus.datasets()[idx / l];
            let detector = &detectors[idx % l];
            let labels = dataset.labels().unwrap_or_default();
            let miss = |metric: Option<Metric>, reason: String| MissingCell {
                dataset: dataset.name().to_string(),
                detector: detector.name(),
                metric,
                reason,
            };
            match detector.score(dataset) {
                Err(e) => (None, None, vec![miss(None, e.to_string())]),
                Ok(scores) => {
                    let mut missing = Vec::new();
                    let a = auc(scores.values(), labels)
                        .map_err(|e| missing.push(miss(Some(Metric::Auc), e.to_string())))
                        .ok()
                        .map(|p| p.value);
                    let p = average_precision(scores.values(), labels)
                        .map_err(|e| missing.push(miss(Some(Metric::Ap), e.to_string())))
                        .ok()
                        .map(|p| p.value);
                    (a, p, missing)
                }
            }
        })
        .collect();

    let mut auc_values = vec![Vec::with_capacity(l); corpus.len()];
    let mut ap_values = vec![Vec::with_capacity(l); corpus.len()];
    let mut missing = Vec::new();
    for (idx, (a, p, m)) in cells.into_iter().enumerate() {
        auc_values[idx / l].push(a);
        ap_values[idx / l].push(p);
        missing.extend(m);
    }
    for m in &missing {
        log::warn!("missing cell ({}, {}): {}", m.dataset, m.detector, m.reason);
    }
    Ok(MatrixBuild {
        auc: PerformanceMatrix::new(Metric::Auc, detector_ids.clone(), dataset_names.clone(), auc_values)?,
        ap: PerformanceMatrix::new(Metric::Ap, detector_ids, dataset_names, ap_values)?,
        missing,
    })
}
