//! Dataset representation, CSV ingestion and corpus handling.
//!
//! A [`Dataset`] is an immutable row-major matrix of `f64` with optional
//! binary labels. Labels are carried along for offline evaluation only;
//! nothing on the selection path reads them.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seed for every stochastic operation in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Portable, reproducible generator for this seed.
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent child seed for stream `index` (splitmix64 finalizer).
    pub fn derive(self, index: u64) -> RngSeed {
        let mut z = self
            .0
            .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

impl From<u64> for RngSeed {
    fn from(v: u64) -> Self {
        RngSeed(v)
    }
}

/// An N×K numeric matrix with optional {0,1} labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    columns: Vec<String>,
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    labels: Option<Vec<u8>>,
}

impl Dataset {
    /// Builds a dataset from row vectors. Column names default to `x0..x{K-1}`.
    pub fn from_rows(name: impl Into<String>, rows: &[Vec<f64>], labels: Option<Vec<u8>>) -> Result<Self> {
        let n_cols = rows.first().map(Vec::len).unwrap_or(0);
        let columns = (0..n_cols).map(|j| format!("x{j}")).collect();
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} values, expected {n_cols}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Self::new(name, columns, rows.len(), values, labels)
    }

    /// Builds a dataset from a flat row-major buffer.
    pub fn new(
        name: impl Into<String>,
        columns: Vec<String>,
        n_rows: usize,
        values: Vec<f64>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n_cols = columns.len();
        if n_cols == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one feature column".into()));
        }
        if n_rows < 2 {
            return Err(Error::TooFewRows {
                what: "a dataset",
                required: 2,
                actual: n_rows,
            });
        }
        if values.len() != n_rows * n_cols {
            return Err(Error::DimensionMismatch(format!(
                "buffer holds {} values, expected {}x{}",
                values.len(),
                n_rows,
                n_cols
            )));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: idx / n_cols,
                column: columns[idx % n_cols].clone(),
            });
        }
        if let Some(labels) = &labels {
            if labels.len() != n_rows {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    n_rows
                )));
            }
            if let Some((row, v)) = labels.iter().enumerate().find(|(_, &v)| v > 1) {
                return Err(Error::InvalidLabel {
                    row,
                    value: v.to_string(),
                });
            }
        }
        Ok(Dataset {
            name: name.into(),
            columns,
            n_rows,
            n_cols,
            values,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// Number of observations (N).
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Number of features (K).
    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.n_cols)
    }

    /// Row-major backing buffer.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    /// Same data with rows reordered so that row `i` of the result is row `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n_rows {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let mut values = Vec::with_capacity(self.values.len());
        for &i in order {
            values.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| order.iter().map(|&i| l[i]).collect());
        Dataset::new(self.name.clone(), self.columns.clone(), self.n_rows, values, labels)
    }

    /// Same data with `f` applied to every value.
    pub fn map_values(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Result<Self> {
        let k = self.n_cols;
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(idx, &v)| f(idx / k, idx % k, v))
            .collect();
        Dataset::new(
            self.name.clone(),
            self.columns.clone(),
            self.n_rows,
            values,
            self.labels.clone(),
        )
    }

    /// Writes the dataset as CSV. Labels, if present, go in a trailing `label_column`.
    pub fn write_csv(&self, path: &Path, label_column: &str) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.columns.iter().map(String::as_str).collect();
        if self.labels.is_some() {
            header.push(label_column);
        }
        writer.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n_rows {
            record.clear();
            record.extend(self.row(i).iter().map(|v| v.to_string()));
            if let Some(labels) = &self.labels {
                record.push(labels[i].to_string());
            }
            writer.write_record(&record)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Loads a CSV file with a header row. All columns except `label_column` must be numeric.
pub fn load_dataset(path: &Path, label_column: Option<&str>) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();

    let label_idx = match label_column {
        Some(col) => Some(
            header
                .iter()
                .position(|h| h == col)
                .ok_or_else(|| Error::NotFound(format!("label column '{col}' in {}", path.display())))?,
        ),
        None => None,
    };
    let columns: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut labels = label_idx.map(|_| Vec::new());
    let mut n_rows = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::DimensionMismatch(format!(
                "row {row} has {} fields, header has {}",
                record.len(),
                header.len()
            )));
        }
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if Some(j) == label_idx {
                let label = match cell {
                    "0" | "0.0" => 0u8,
                    "1" | "1.0" => 1u8,
                    other => {
                        return Err(Error::InvalidLabel {
                            row,
                            value: other.to_string(),
                        })
                    }
                };
                if let Some(labels) = labels.as_mut() {
                    labels.push(label);
                }
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: header[j].clone(),
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row,
                    column: header[j].clone(),
                });
            }
            values.push(v);
        }
        n_rows += 1;
    }
    Dataset::new(name, columns, n_rows, values, labels)
}

/// Like [`load_dataset`], but reads labels from `label_column` only when the
/// header has it; otherwise the dataset is unlabeled.
pub fn load_dataset_detect_label(path: &Path, label_column: &str) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let present = reader.headers()?.iter().any(|h| h.trim() == label_column);
    load_dataset(path, present.then_some(label_column))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}' (expected train, val or test)"))),
        }
    }
}

/// Ordered collection of uniquely named datasets.
#[derive(Debug, Clone)]
pub struct Corpus {
    datasets: Vec<Dataset>,
    split: Option<BTreeMap<String, Split>>,
}

impl Corpus {
    pub fn new(datasets: Vec<Dataset>) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &datasets {
            if !seen.insert(d.name()) {
                return Err(Error::InvalidArgument(format!("duplicate dataset name '{}'", d.name())));
            }
        }
        Ok(Corpus { datasets, split: None })
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Dataset> {
        self.datasets.iter().find(|d| d.name() == name)
    }

    pub fn split_assignment(&self) -> Option<&BTreeMap<String, Split>> {
        self.split.as_ref()
    }

    /// Attaches a split map; every dataset must be assigned and no unknown names may appear.
    pub fn with_split(mut self, split: BTreeMap<String, Split>) -> Result<Self> {
        for d in &self.datasets {
            if !split.contains_key(d.name()) {
                return Err(Error::InvalidArgument(format!("dataset '{}' has no split", d.name())));
            }
        }
        if split.len() != self.datasets.len() {
            return Err(Error::InvalidArgument("split names datasets not in the corpus".into()));
        }
        self.split = Some(split);
        Ok(self)
    }

    /// Names assigned to `which`, in corpus order.
    pub fn names_in(&self, which: Split) -> Vec<String> {
        let Some(split) = &self.split else {
            return Vec::new();
        };
        self.datasets
            .iter()
            .filter(|d| split.get(d.name()) == Some(&which))
            .map(|d| d.name().to_string())
            .collect()
    }

    /// Loads every `*.csv` under `dir` (sorted by file name), reading labels from `label_column`.
    pub fn load_dir(dir: &Path, label_column: Option<&str>) -> Result<Self> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        paths.sort();
        let datasets = paths
            .iter()
            .map(|p| load_dataset(p, label_column))
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(datasets)
    }

    /// Writes one `<name>.csv` per dataset into `dir`.
    pub fn write_dir(&self, dir: &Path, label_column: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for d in &self.datasets {
            d.write_csv(&dir.join(format!("{}.csv", d.name())), label_column)?;
        }
        Ok(())
    }
}

/// Split sizes by largest-remainder rounding. Remainder ties go to the earlier split.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Randomly assigns each dataset to train/val/test with the given fractions.
pub fn split_corpus(corpus: Corpus, ratios: [f64; 3], seed: RngSeed) -> Result<Corpus> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::InvalidArgument("split ratios must be positive".into()));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios sum to {sum}, expected 1")));
    }
    if corpus.len() < 4 {
        return Err(Error::TooFewRows {
            what: "a corpus split",
            required: 4,
            actual: corpus.len(),
        });
    }
    let sizes = split_sizes(corpus.len(), ratios);
    if sizes[2] == 0 {
        return Err(Error::InvalidArgument("corpus too small for a nonempty test split".into()));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut seed.rng());

    let mut map = BTreeMap::new();
    for (pos, &idx) in order.iter().enumerate() {
        let which = if pos < sizes[0] {
            Split::Train
        } else if pos < sizes[0] + sizes[1] {
            Split::Val
        } else {
            Split::Test
        };
        map.insert(corpus.datasets[idx].name().to_string(), which);
    }
    corpus.with_split(map)
}

pub fn write_split(path: &Path, split: &BTreeMap<String, Split>) -> Result<()> {
    let text = serde_json::to_string_pretty(split)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_split(path: &Path) -> Result<BTreeMap<String, Split>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
