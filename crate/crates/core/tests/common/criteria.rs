//! One check per acceptance criterion. Each returns a short summary on
//! success and a description of the first violation otherwise.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anomsel::detectors::{
    abod_scores, copod_scores, hbos_scores, iforest_scores, knn_scores, lof_scores, pca_scores, KnnMethod,
};
use anomsel::metafeatures::{read_features_map, FEATURE_NAMES};
use anomsel::metamodel::{evaluate_loss, gradient_check, load_model, MetaModel, MlpConfig, Mode};
use anomsel::metrics::{auc, average_precision};
use anomsel::pipeline::{read_json, split_names, training_set, Evaluation, PipelinePaths};
use anomsel::stats::{cohens_d, compare_selectors, paired_t_test, EffectSize};
use anomsel::synth::{generate_dataset, SynthSpec};
use anomsel::{extract, matrix::PerformanceMatrix, Dataset, Metric, RngSeed, Split};
use num_rational::BigRational;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;

pub type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rows_of(ds: &Dataset) -> Rows {
    ds.rows().map(<[f64]>::to_vec).collect()
}

/// A small planted-anomaly dataset with 25–150 inliers and 2–6 columns.
pub fn random_dataset(rng: &mut ChaCha8Rng, max_inliers: usize) -> Dataset {
    let n_in = rng.random_range(25..=max_inliers);
    let k = rng.random_range(2..=6);
    let spec = SynthSpec::new(n_in, (n_in / 10).max(1), k, rng.random());
    generate_dataset(&spec).expect("feasible spec")
}

// ---------- 1. meta-features ----------

pub fn feature_invariants(ds: &Dataset) -> std::result::Result<(), String> {
    let f = extract(ds).map_err(|e| e.to_string())?.0;
    ensure(f.len() == 19, || format!("length {}", f.len()))?;
    for block in 0..4 {
        let [tr, cm, th, tq] = [f[4 * block], f[4 * block + 1], f[4 * block + 2], f[4 * block + 3]];
        ensure(tr >= 0.0, || format!("{}: negative range", FEATURE_NAMES[4 * block]))?;
        for (i, v) in [cm, th, tq].into_iter().enumerate() {
            ensure((0.0..=1.0).contains(&v), || format!("{} = {v}", FEATURE_NAMES[4 * block + 1 + i]))?;
        }
        ensure(tq <= th, || format!("block {block}: TQ {tq} > TH {th}"))?;
    }
    ensure(f[16..].iter().all(|&l| l >= 0.0), || "negative locality".into())?;

    let shifted = ds
        .map_values(|_, j, v| v + 3.5 * (j as f64 + 1.0))
        .map_err(|e| e.to_string())?;
    let fs = extract(&shifted).map_err(|e| e.to_string())?.0;
    for i in 0..19 {
        ensure(close(fs[i], f[i], 1e-7, 1.0), || {
            format!("translation changed {} from {} to {}", FEATURE_NAMES[i], f[i], fs[i])
        })?;
    }

    let n = ds.n_rows();
    let order: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
    let order = if is_permutation(&order) { order } else { (0..n).rev().collect() };
    let fp = extract(&ds.permuted(&order).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?
        .0;
    for i in 0..19 {
        ensure(close(fp[i], f[i], 1e-9, 1.0), || {
            format!("row permutation changed {} from {} to {}", FEATURE_NAMES[i], f[i], fp[i])
        })?;
    }
    Ok(())
}

fn is_permutation(order: &[usize]) -> bool {
    let mut seen = vec![false; order.len()];
    order.iter().all(|&i| !std::mem::replace(&mut seen[i], true))
}

pub fn check_metafeatures(n_datasets: usize, seed: u64) -> Check {
    let mut rng = RngSeed(seed).rng();
    let mut worst = 0.0f64;
    for d in 0..n_datasets {
        let ds = random_dataset(&mut rng, 150);
        let got = extract(&ds).map_err(|e| format!("dataset {d}: {e}"))?.0;
        let want = oracle_metafeatures(&rows_of(&ds));
        for i in 0..19 {
            let err = (got[i] - want[i]).abs() / want[i].abs().max(1.0);
            worst = worst.max(err);
            ensure(err <= 1e-6, || {
                format!("dataset {d} ({}x{}): {} = {} vs oracle {}", ds.n_rows(), ds.n_cols(), FEATURE_NAMES[i], got[i], want[i])
            })?;
        }
        feature_invariants(&ds).map_err(|e| format!("dataset {d}: {e}"))?;
    }
    Ok(format!("{n_datasets} datasets, worst scaled error {worst:.1e}, invariants hold"))
}

// ---------- 2. metrics ----------

/// Whether `x` is the double nearest to the rational `exact`.
pub fn is_nearest_double(x: f64, exact: &BigRational) -> bool {
    let rx = BigRational::from_float(x).expect("finite");
    let below = BigRational::from_float(x.next_down()).expect("finite");
    let above = BigRational::from_float(x.next_up()).expect("finite");
    let gap = |r: &BigRational| {
        let d = r - exact;
        if d < BigRational::from_integer(0.into()) {
            -d
        } else {
            d
        }
    };
    gap(&rx) <= gap(&below) && gap(&rx) <= gap(&above)
}

pub fn check_metrics(n_instances: usize, n_rational: usize, seed: u64) -> Check {
    let mut rng = RngSeed(seed).rng();
    let mut worst_ap = 0.0f64;
    for i in 0..n_instances {
        let (scores, labels) = metric_instance(&mut rng);
        let a = auc(&scores, &labels).map_err(|e| e.to_string())?.value;
        let want = oracle_auc(&scores, &labels);
        ensure(a == want, || format!("instance {i}: AUC {a} vs pairwise {want}"))?;
        if i < n_rational {
            let exact = oracle_auc_exact(&scores, &labels);
            ensure(is_nearest_double(a, &exact), || format!("instance {i}: AUC {a} is not the rounding of {exact}"))?;
        }
        let ap = average_precision(&scores, &labels).map_err(|e| e.to_string())?.value;
        let want = oracle_ap(&scores, &labels);
        worst_ap = worst_ap.max((ap - want).abs());
        ensure((ap - want).abs() <= 1e-12, || format!("instance {i}: AP {ap} vs cumulative {want}"))?;
    }
    Ok(format!(
        "{n_instances} instances, AUC exact ({n_rational} checked in rationals), worst AP error {worst_ap:.1e}"
    ))
}

// ---------- 3. detectors ----------

fn compare_scores(name: &str, got: &[f64], want: &[f64]) -> std::result::Result<f64, String> {
    let scale = want.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        let err = (g - w).abs() / w.abs().max(1e-9 * scale).max(1e-300);
        worst = worst.max(err);
        ensure(err <= 1e-6, || format!("{name} row {i}: {g} vs oracle {w}"))?;
    }
    Ok(worst)
}

/// Index of the largest value, first on ties.
pub fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

pub fn check_detectors(n_datasets: usize, seed: u64) -> Check {
    let mut rng = RngSeed(seed).rng();
    let mut worst = 0.0f64;
    for d in 0..n_datasets {
        let ds = random_dataset(&mut rng, 180);
        let rows = rows_of(&ds);
        let tag = |det: &str| format!("dataset {d} {det}");
        let run = |r: anomsel::Result<anomsel::AnomalyScores>| r.map(|s| s.0).map_err(|e| e.to_string());
        let pairs: [(&str, Vec<f64>, Vec<f64>); 7] = [
            ("KNN", run(knn_scores(&ds, 60, KnnMethod::Mean))?, oracle_knn(&rows, 60, false)),
            ("KTHNN", run(knn_scores(&ds, 60, KnnMethod::Largest))?, oracle_knn(&rows, 60, true)),
            ("LOF", run(lof_scores(&ds, 60))?, oracle_lof(&rows, 60)),
            ("HBOS", run(hbos_scores(&ds, 90))?, oracle_hbos(&rows, 90)),
            ("PCA", run(pca_scores(&ds))?, oracle_pca(&rows)),
            ("COPOD", run(copod_scores(&ds))?, oracle_copod(&rows)),
            ("ABOD", run(abod_scores(&ds, 60))?, oracle_abod(&rows, 60)),
        ];
        for (name, got, want) in &pairs {
            worst = worst.max(compare_scores(&tag(name), got, want)?);
        }

        let a = run(iforest_scores(&ds, 100, 1.0, RngSeed(d as u64)))?;
        let b = run(iforest_scores(&ds, 100, 1.0, RngSeed(d as u64)))?;
        ensure(a == b, || tag("IFOREST: same seed gave different scores"))?;
    }
    check_iforest_outlier_rank(seed)?;
    Ok(format!(
        "{n_datasets} datasets x 7 deterministic detectors, worst relative error {worst:.1e}; iForest deterministic and ranks a planted outlier first"
    ))
}

/// A single far point among Gaussian rows gets the top iForest score.
pub fn check_iforest_outlier_rank(seed: u64) -> std::result::Result<(), String> {
    let mut rng = RngSeed(seed ^ 0x5eed).rng();
    for trial in 0..5 {
        let mut rows = gaussian_rows(&mut rng, 150, 4);
        let far = 40 + trial;
        rows[far] = vec![12.0; 4];
        let ds = Dataset::from_rows("iforest", &rows, None).map_err(|e| e.to_string())?;
        let s = iforest_scores(&ds, 100, 1.0, RngSeed(trial as u64)).map_err(|e| e.to_string())?.0;
        ensure(argmax(&s) == far, || format!("trial {trial}: outlier ranked below row {}", argmax(&s)))?;
        ensure(s.iter().all(|v| (0.0..=1.0).contains(v)), || "iForest score outside [0, 1]".into())?;
    }
    Ok(())
}

// ---------- 4. gradients ----------

pub fn random_network(rng: &mut ChaCha8Rng) -> (MetaModel, Vec<f64>, Vec<f64>) {
    let n_in = rng.random_range(2..=6);
    let n_out = rng.random_range(1..=4);
    let depth = rng.random_range(1..=3);
    let config = MlpConfig {
        hidden: (0..depth).map(|_| rng.random_range(2..=7)).collect(),
        seed: rng.random(),
        ..MlpConfig::default()
    };
    let ids = (0..n_out).map(|j| format!("D{j}")).collect();
    let mut model = MetaModel::initialize(config, n_in, ids, Metric::Auc, rng).expect("valid network");
    // zero biases put dead-layer outputs exactly on the ReLU kink, where
    // finite differences disagree with any subgradient
    for layer in &mut model.layers {
        for b in &mut layer.bias {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let x = (0..n_in).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let y = (0..n_out).map(|_| rng.random::<f64>()).collect();
    (model, x, y)
}

pub fn check_gradients(n_networks: usize, seed: u64) -> Check {
    let mut rng = RngSeed(seed).rng();
    let mut worst = 0.0f64;
    for i in 0..n_networks {
        let (model, x, y) = random_network(&mut rng);
        let err = gradient_check(&model, &x, &y, 1e-6).map_err(|e| e.to_string())?;
        worst = worst.max(err);
        ensure(err < 1e-4, || format!("network {i} {:?}: relative error {err:.2e}", model.config.hidden))?;
    }
    Ok(format!("{n_networks} networks, worst relative error {worst:.1e}"))
}

// ---------- 5. early stopping ----------

pub fn check_early_stopping(paths: &PipelinePaths, model: &MetaModel) -> Check {
    let log = &model.training_log;
    ensure(model.config.max_epochs == 1000, || format!("max_epochs = {}", model.config.max_epochs))?;
    ensure(!log.epochs.is_empty(), || "empty training log".into())?;
    let (arg, min) = log
        .epochs
        .iter()
        .map(|e| (e.epoch, e.val_loss))
        .fold((0, f64::INFINITY), |(ba, bm), (a, m)| if m < bm { (a, m) } else { (ba, bm) });
    ensure(log.best_val_loss == min, || format!("best_val_loss {} but minimum logged {min}", log.best_val_loss))?;
    ensure(log.best_epoch == arg, || format!("best_epoch {} but minimum at epoch {arg}", log.best_epoch))?;

    let features = read_features_map(&paths.features).map_err(|e| e.to_string())?;
    let matrix = PerformanceMatrix::read_csv(&paths.matrix_auc, Metric::Auc).map_err(|e| e.to_string())?;
    let split: BTreeMap<String, Split> = read_json(&paths.split).map_err(|e| e.to_string())?;
    let val = training_set(&features, &matrix, &split_names(&matrix, &split, Split::Val)).map_err(|e| e.to_string())?;
    let restored = evaluate_loss(model, &val).map_err(|e| e.to_string())?;
    ensure(close(restored, log.best_val_loss, 1e-12, 1e-300), || {
        format!("restored weights give val loss {restored}, best epoch had {}", log.best_val_loss)
    })?;

    let first = log.epochs[0].train_loss;
    let last = log.epochs.last().map(|e| e.train_loss).unwrap_or(first);
    ensure(last <= 0.5 * first, || format!("train loss fell only from {first:.4} to {last:.4}"))?;
    Ok(format!(
        "{} epochs, best epoch {} restored (val loss {:.5}), train loss {first:.4} -> {last:.4}",
        log.epochs.len(),
        log.best_epoch,
        log.best_val_loss
    ))
}

// ---------- 6. selection quality ----------

pub fn check_selection_quality(e: &Evaluation, min_datasets: usize) -> Check {
    ensure(e.n_test >= min_datasets, || format!("only {} test datasets", e.n_test))?;
    let r = &e.vs_random_expected;
    ensure(e.mean_performance_meta > e.mean_performance_random, || {
        format!("meta {:.4} <= random {:.4}", e.mean_performance_meta, e.mean_performance_random)
    })?;
    ensure(r.performance.p_value < 0.05, || format!("p = {:.3e}", r.performance.p_value))?;
    let d = r.error.effect_size_d.unwrap_or(0.0);
    ensure(d >= 0.2, || format!("Cohen's d on errors {d:.3} < 0.2"))?;
    ensure(e.mean_error_meta < e.mean_error_single_best || e.mean_error_meta <= e.mean_error_single_best + 0.02, || {
        format!("meta error {:.4} vs single-best {:.4}", e.mean_error_meta, e.mean_error_single_best)
    })?;
    Ok(format!(
        "n_test {}: AUC meta {:.4} vs random {:.4} (p {:.1e}, d {:.2}); error meta {:.4} vs single-best {} {:.4}",
        e.n_test,
        e.mean_performance_meta,
        e.mean_performance_random,
        r.performance.p_value,
        d,
        e.mean_error_meta,
        e.single_best_detector,
        e.mean_error_single_best
    ))
}

// ---------- 7. statistics ----------

pub fn oracle_paired_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    let t = m / (var / n).sqrt();
    (t, oracle_two_sided_p(t, n - 1.0))
}

pub fn check_statistics(n_samples: usize, seed: u64) -> Check {
    let mut rng = RngSeed(seed).rng();
    let mut worst = 0.0f64;
    for i in 0..n_samples {
        let n = rng.random_range(3..=60);
        let shift = rng.random_range(-1.0..1.0);
        let a: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|x| x + shift * 0.3 + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let got = paired_t_test(&a, &b).map_err(|e| e.to_string())?;
        let (t, p) = oracle_paired_t(&a, &b);
        ensure(close(got.t_statistic, t, 1e-10, 1e-10), || format!("sample {i}: t {} vs {t}", got.t_statistic))?;
        worst = worst.max((got.p_value - p).abs());
        ensure((got.p_value - p).abs() <= 1e-6, || format!("sample {i}: p {} vs reference {p}", got.p_value))?;
    }

    let d = cohens_d(&[1.0, 1.0, 2.0, 2.0], &[0.0, 0.0, 1.0, 1.0]).map_err(|e| e.to_string())?;
    ensure((d.d - 3f64.sqrt()).abs() <= 1e-9, || format!("Cohen's d example gave {}", d.d))?;
    ensure(d.magnitude == EffectSize::Large, || format!("Cohen's d example is {:?}", d.magnitude))?;

    let (matrix, reports) = identical_selector_fixture(&mut rng);
    let same = compare_selectors(&matrix, &reports, &reports).map_err(|e| e.to_string())?;
    for (view, c) in [("performance", &same.performance), ("error", &same.error)] {
        ensure(c.degenerate && c.p_value == 1.0 && c.t_statistic == 0.0, || format!("identical selectors: {view} t-test not degenerate"))?;
        ensure(c.effect_size_d == Some(0.0), || format!("identical selectors: {view} d = {:?}", c.effect_size_d))?;
    }
    Ok(format!(
        "{n_samples} paired samples, worst p-value gap {worst:.1e}; d example {:.9}; identical selectors degenerate with d = 0",
        d.d
    ))
}

/// A random 30x8 matrix and a random selection per row.
pub fn identical_selector_fixture(rng: &mut ChaCha8Rng) -> (PerformanceMatrix, Vec<anomsel::metamodel::SelectionReport>) {
    let ids: Vec<String> = (0..8).map(|j| format!("D{j}")).collect();
    let names: Vec<String> = (0..30).map(|i| format!("set{i}")).collect();
    let values = names
        .iter()
        .map(|_| (0..8).map(|_| Some(rng.random_range(0.3..1.0))).collect())
        .collect();
    let matrix = PerformanceMatrix::new(Metric::Auc, ids.clone(), names.clone(), values).expect("valid matrix");
    let reports = names
        .iter()
        .map(|n| {
            let preds: Vec<f64> = (0..8).map(|_| rng.random()).collect();
            anomsel::metamodel::SelectionReport::from_predictions(n, &ids, &preds).expect("valid report")
        })
        .collect();
    (matrix, reports)
}

// ---------- 8. determinism ----------

fn collect_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Every file under `a` exists under `b` with identical bytes, and vice versa.
pub fn compare_trees(a: &Path, b: &Path) -> std::result::Result<usize, String> {
    let list = |d: &Path| -> std::result::Result<Vec<std::path::PathBuf>, String> {
        let mut v = Vec::new();
        collect_files(d, &mut v).map_err(|e| e.to_string())?;
        let mut rel: Vec<_> = v.into_iter().map(|p| p.strip_prefix(d).unwrap().to_path_buf()).collect();
        rel.sort();
        Ok(rel)
    };
    let (la, lb) = (list(a)?, list(b)?);
    ensure(la == lb, || format!("file lists differ: {} vs {} files", la.len(), lb.len()))?;
    for rel in &la {
        let (x, y) = (fs::read(a.join(rel)), fs::read(b.join(rel)));
        ensure(matches!((&x, &y), (Ok(x), Ok(y)) if x == y), || format!("{} differs between runs", rel.display()))?;
    }
    Ok(la.len())
}

pub fn check_determinism(first: &PipelinePaths, second: &PipelinePaths, model: &MetaModel) -> Check {
    for f in first.deterministic_files() {
        ensure(f.exists(), || format!("missing artifact {}", f.display()))?;
    }
    let root_a = first.model.parent().expect("run dir");
    let root_b = second.model.parent().expect("run dir");
    let n_files = compare_trees(root_a, root_b)?;

    let loaded = load_model(&first.model).map_err(|e| e.to_string())?;
    let features = read_features_map(&first.features).map_err(|e| e.to_string())?;
    for (name, f) in &features {
        let x = model.forward(&f.0, Mode::Infer).map_err(|e| e.to_string())?;
        let y = loaded.forward(&f.0, Mode::Infer).map_err(|e| e.to_string())?;
        let same = x.iter().zip(&y).all(|(p, q)| p.to_bits() == q.to_bits());
        ensure(same, || format!("{name}: reloaded model output differs"))?;
    }
    Ok(format!(
        "{n_files} files byte-identical across reruns; reloaded model bit-exact on {} inputs",
        features.len()
    ))
}
