//! Evaluation statistics for comparing selectors: distance from the top,
//! paired t-tests and Cohen's d.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::matrix::{top_performance, PerformanceMatrix};
use crate::metamodel::SelectionReport;
use crate::metrics::Metric;

/// Errors at or below this are treated as zero by the log-error column.
pub const LOG_ERROR_FLOOR: f64 = 1e-12;

/// Gap between the best measured performance on a dataset and the
/// performance of the selected detector.
pub fn meta_error(y_top: f64, y_sel: f64) -> f64 {
    y_top - y_sel
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance; zero for a single element.
fn sample_variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Result of a two-sided paired t-test.
///
/// When every difference is identical the statistic is undefined; the result
/// then carries `t = 0`, `p = 1` and `degenerate = true`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub degenerate: bool,
}

/// Two-sided p-value of a Student t statistic.
pub fn two_sided_p(t: f64, df: usize) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1 is a valid Student t");
    (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0)
}

/// Paired t-test on `d = a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "paired samples have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("paired t-test needs at least 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let df = n - 1;
    let var = sample_variance(&d);
    // Differences that agree to rounding are treated as constant.
    let scale = d.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if var.sqrt() <= 1e-14 * scale || var == 0.0 {
        return Ok(TTest {
            t_statistic: 0.0,
            degrees_of_freedom: df,
            p_value: 1.0,
            degenerate: true,
        });
    }
    let t = mean(&d) / (var / n as f64).sqrt();
    Ok(TTest {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: two_sided_p(t, df),
        degenerate: false,
    })
}

/// Conventional magnitude bands for |d|.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectSize {
    Small,
    Medium,
    Large,
}

impl EffectSize {
    pub fn classify(d: f64) -> Self {
        let d = d.abs();
        if d <= 0.2 {
            EffectSize::Small
        } else if d <= 0.5 {
            EffectSize::Medium
        } else {
            EffectSize::Large
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohensD {
    pub d: f64,
    pub magnitude: EffectSize,
}

/// `(mean(a) - mean(b)) / s*` with the pooled standard deviation `s*`.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<CohensD> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("Cohen's d needs two nonempty samples".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    if na + nb <= 2.0 {
        return Err(Error::InvalidArgument("Cohen's d needs at least 3 observations in total".into()));
    }
    let pooled = ((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / (na + nb - 2.0);
    if pooled <= 0.0 {
        return Err(Error::InvalidArgument("Cohen's d is undefined for zero pooled variance".into()));
    }
    let d = (mean(a) - mean(b)) / pooled.sqrt();
    Ok(CohensD {
        d,
        magnitude: EffectSize::classify(d),
    })
}

/// Summary of two paired samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub std_a: f64,
    pub std_b: f64,
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub degenerate: bool,
    /// `None` when the pooled variance is zero.
    pub effect_size_d: Option<f64>,
    pub effect_size: Option<EffectSize>,
}

/// Means, paired t-test and Cohen's d for `a` against `b`.
pub fn compare_paired(a: &[f64], b: &[f64]) -> Result<ComparisonReport> {
    let t = paired_t_test(a, b)?;
    let d = cohens_d(a, b).ok();
    Ok(ComparisonReport {
        n: a.len(),
        mean_a: mean(a),
        mean_b: mean(b),
        std_a: sample_variance(a).sqrt(),
        std_b: sample_variance(b).sqrt(),
        t_statistic: t.t_statistic,
        degrees_of_freedom: t.degrees_of_freedom,
        p_value: t.p_value,
        degenerate: t.degenerate,
        effect_size_d: d.map(|d| d.d),
        effect_size: d.map(|d| d.magnitude),
    })
}

/// `ln(error)`, or `None` when the error is at most [`LOG_ERROR_FLOOR`].
pub fn log_error(error: f64) -> Option<f64> {
    (error > LOG_ERROR_FLOOR).then(|| error.ln())
}

/// One dataset of a selector comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetComparison {
    pub dataset: String,
    pub top_detector: String,
    pub top: f64,
    pub selected_a: String,
    pub selected_b: String,
    pub performance_a: f64,
    pub performance_b: f64,
    pub error_a: f64,
    pub error_b: f64,
    pub log_error_a: Option<f64>,
    pub log_error_b: Option<f64>,
}

/// Measured performance and error views of two selectors on the same datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorComparison {
    pub metric: Metric,
    pub performance: ComparisonReport,
    pub error: ComparisonReport,
    pub datasets: Vec<DatasetComparison>,
}

/// Looks every selection up in `matrix` and compares the two selectors.
///
/// Both report lists must name the same datasets; they are paired by name
/// and rows follow the order of `reports_a`.
pub fn compare_selectors(
    matrix: &PerformanceMatrix,
    reports_a: &[SelectionReport],
    reports_b: &[SelectionReport],
) -> Result<SelectorComparison> {
    if reports_a.len() != reports_b.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} reports against {} reports",
            reports_a.len(),
            reports_b.len()
        )));
    }
    let lookup = |r: &SelectionReport| -> Result<f64> {
        if matrix.row_index(&r.dataset).is_none() {
            return Err(Error::NotFound(format!("dataset '{}' in the performance matrix", r.dataset)));
        }
        if matrix.detector_index(&r.selected).is_none() {
            return Err(Error::NotFound(format!("detector '{}' in the performance matrix", r.selected)));
        }
        matrix.value(&r.dataset, &r.selected).ok_or_else(|| {
            Error::UndefinedMetric(format!("no measured value for ({}, {})", r.dataset, r.selected))
        })
    };
    let mut rows = Vec::with_capacity(reports_a.len());
    for ra in reports_a {
        let rb = reports_b
            .iter()
            .find(|r| r.dataset == ra.dataset)
            .ok_or_else(|| Error::NotFound(format!("dataset '{}' in the second report list", ra.dataset)))?;
        let (top_detector, top) = top_performance(matrix, &ra.dataset)?;
        let (pa, pb) = (lookup(ra)?, lookup(rb)?);
        let (ea, eb) = (meta_error(top, pa), meta_error(top, pb));
        rows.push(DatasetComparison {
            dataset: ra.dataset.clone(),
            top_detector,
            top,
            selected_a: ra.selected.clone(),
            selected_b: rb.selected.clone(),
            performance_a: pa,
            performance_b: pb,
            error_a: ea,
            error_b: eb,
            log_error_a: log_error(ea),
            log_error_b: log_error(eb),
        });
    }
    let col = |f: fn(&DatasetComparison) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let performance = compare_paired(&col(|r| r.performance_a), &col(|r| r.performance_b))?;
    let error = compare_paired(&col(|r| r.error_a), &col(|r| r.error_b))?;
    Ok(SelectorComparison {
        metric: matrix.metric,
        performance,
        error,
        datasets: rows,
    })
}
