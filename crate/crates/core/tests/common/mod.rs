//! Brute-force reference implementations shared by the oracle tests and the
//! acceptance run. Everything here is written from the definitions, without
//! calling into the library's numerical code.
#![allow(dead_code, clippy::needless_range_loop)]

pub mod criteria;

use num_rational::BigRational;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Rows = Vec<Vec<f64>>;

/// `|a - b| <= tol * max(|b|, floor)`.
pub fn close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(floor)
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Rows {
    (0..n)
        .map(|_| (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

/// Correlated Gaussian rows plus a few far points.
pub fn contaminated_rows(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Rows {
    let mix: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..k).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5).collect())
        .collect();
    (0..n)
        .map(|i| {
            let z: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let mut x: Vec<f64> = (0..k)
                .map(|a| z[a] + (0..k).map(|b| mix[a][b] * z[b]).sum::<f64>())
                .collect();
            if i % 17 == 0 {
                for v in &mut x {
                    *v += 6.0;
                }
            }
            x
        })
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Indices of the `k` nearest other rows by (distance, index).
pub fn neighbors(rows: &Rows, i: usize, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = (0..rows.len())
        .filter(|&j| j != i)
        .map(|j| (j, dist(&rows[i], &rows[j])))
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

// ---------- linear algebra ----------

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn inverse(mut a: Rows) -> Rows {
    let n = a.len();
    let mut inv: Rows = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        inv.swap(col, piv);
        let p = a[col][col];
        for j in 0..n {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for j in 0..n {
                        a[r][j] -= f * a[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    inv
}

fn mean_of(rows: &[&Vec<f64>]) -> Vec<f64> {
    let k = rows[0].len();
    (0..k)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
        .collect()
}

/// Sample covariance with the n−1 denominator.
fn sample_cov(rows: &[&Vec<f64>]) -> Rows {
    let k = rows[0].len();
    let m = mean_of(rows);
    let denom = (rows.len().max(2) - 1) as f64;
    (0..k)
        .map(|a| {
            (0..k)
                .map(|b| rows.iter().map(|r| (r[a] - m[a]) * (r[b] - m[b])).sum::<f64>() / denom)
                .collect()
        })
        .collect()
}

/// Ridge rule: add `max(1e-6·trace/K, 1e-12)` to the diagonal.
fn ridge(mut s: Rows) -> Rows {
    let k = s.len();
    let tr: f64 = (0..k).map(|i| s[i][i]).sum();
    let lambda = (1e-6 * tr / k as f64).max(1e-12);
    for (i, row) in s.iter_mut().enumerate() {
        row[i] += lambda;
    }
    s
}

fn quad(x: &[f64], mu: &[f64], p: &Rows) -> f64 {
    let d: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let q: f64 = (0..d.len())
        .map(|a| (0..d.len()).map(|b| d[a] * p[a][b] * d[b]).sum::<f64>())
        .sum();
    q.max(0.0).sqrt()
}

// ---------- meta-features ----------

pub fn oracle_global(rows: &Rows) -> Vec<f64> {
    let all: Vec<&Vec<f64>> = rows.iter().collect();
    let p = inverse(ridge(sample_cov(&all)));
    (0..rows.len())
        .map(|i| {
            let others: Vec<&Vec<f64>> = rows.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, r)| r).collect();
            quad(&rows[i], &mean_of(&others), &p)
        })
        .collect()
}

pub fn oracle_local(rows: &Rows, s: usize) -> Vec<f64> {
    let s = s.min(rows.len() - 1);
    (0..rows.len())
        .map(|i| {
            let nb: Vec<&Vec<f64>> = neighbors(rows, i, s).iter().map(|(j, _)| &rows[*j]).collect();
            let p = inverse(ridge(sample_cov(&nb)));
            quad(&rows[i], &mean_of(&nb), &p)
        })
        .collect()
}

/// Linear interpolation between order statistics at position q·(n−1).
pub fn oracle_percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < v.len() {
        v[lo] * (1.0 - frac) + v[lo + 1] * frac
    } else {
        v[lo]
    }
}

pub fn oracle_shape(values: &[f64]) -> [f64; 4] {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let tr = max - min;
    if tr <= 0.0 {
        return [0.0; 4];
    }
    let (p25, p50, p75) = (
        oracle_percentile(values, 0.25),
        oracle_percentile(values, 0.5),
        oracle_percentile(values, 0.75),
    );
    [tr, (p75 - p25) / tr, (max - p50) / tr, (max - p75) / tr]
}

pub fn oracle_metafeatures(rows: &Rows) -> [f64; 19] {
    let g = oracle_global(rows);
    let mut out = [0.0; 19];
    out[..4].copy_from_slice(&oracle_shape(&g));
    for (slot, s) in [20usize, 60, 80].into_iter().enumerate() {
        let l = oracle_local(rows, s);
        out[4 * (slot + 1)..4 * (slot + 2)].copy_from_slice(&oracle_shape(&l));
        let ratios: Vec<f64> = l.iter().zip(&g).filter(|(_, &gv)| gv > 1e-12).map(|(a, b)| a / b).collect();
        out[16 + slot] = if ratios.is_empty() {
            0.0
        } else {
            ratios.iter().sum::<f64>() / ratios.len() as f64
        };
    }
    out
}

// ---------- detectors ----------

pub fn oracle_knn(rows: &Rows, k: usize, largest: bool) -> Vec<f64> {
    let k = k.min(rows.len() - 1);
    (0..rows.len())
        .map(|i| {
            let nb = neighbors(rows, i, k);
            if largest {
                nb.last().unwrap().1
            } else {
                nb.iter().map(|n| n.1).sum::<f64>() / k as f64
            }
        })
        .collect()
}

/// LOF from the textbook definitions, with a 1e-10 guard on the mean
/// reachability distance.
pub fn oracle_lof(rows: &Rows, k: usize) -> Vec<f64> {
    let k = k.min(rows.len() - 1);
    let nbs: Vec<Vec<(usize, f64)>> = (0..rows.len()).map(|i| neighbors(rows, i, k)).collect();
    let kdist: Vec<f64> = nbs.iter().map(|nb| nb.last().unwrap().1).collect();
    let lrd: Vec<f64> = nbs
        .iter()
        .map(|nb| {
            let mean_reach = nb.iter().map(|&(o, d)| kdist[o].max(d)).sum::<f64>() / k as f64;
            1.0 / (mean_reach + 1e-10)
        })
        .collect();
    (0..rows.len())
        .map(|i| nbs[i].iter().map(|&(o, _)| lrd[o]).sum::<f64>() / (k as f64 * lrd[i]))
        .collect()
}

/// HBOS with explicit bin edges; the last bin is closed on the right.
pub fn oracle_hbos(rows: &Rows, n_bins: usize) -> Vec<f64> {
    let n = rows.len();
    let mut scores = vec![0.0; n];
    for j in 0..rows[0].len() {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / n_bins as f64;
        let bin = |v: f64| -> usize {
            if hi <= lo {
                return 0;
            }
            let mut b = 0;
            while b + 1 < n_bins && v >= lo + (b + 1) as f64 * width {
                b += 1;
            }
            b
        };
        let bins: Vec<usize> = col.iter().map(|&v| bin(v)).collect();
        let mut counts = vec![0usize; n_bins];
        for &b in &bins {
            counts[b] += 1;
        }
        let top = *counts.iter().max().unwrap() as f64;
        for (s, &b) in scores.iter_mut().zip(&bins) {
            let h = if counts[b] == 0 { 1e-9 } else { counts[b] as f64 / top };
            *s -= h.ln();
        }
    }
    scores
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations; eigenvectors
/// are the columns of the returned matrix.
pub fn jacobi_eigen(mut a: Rows) -> (Vec<f64>, Rows) {
    let n = a.len();
    let mut v: Rows = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// PCA score: retained components by cumulative variance ≥ 95%,
/// Σ p²/λ over them plus the discarded energy over the mean discarded λ.
pub fn oracle_pca(rows: &Rows) -> Vec<f64> {
    let n = rows.len();
    let k = rows[0].len();
    let all: Vec<&Vec<f64>> = rows.iter().collect();
    let mu = mean_of(&all);
    let (vals, vecs) = jacobi_eigen(sample_cov(&all));
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
    let lam: Vec<f64> = order.iter().map(|&c| vals[c].max(0.0)).collect();
    let total: f64 = lam.iter().sum();
    let mut m = k;
    let mut cum = 0.0;
    for (i, l) in lam.iter().enumerate() {
        cum += l;
        if cum >= 0.95 * total {
            m = i + 1;
            break;
        }
    }
    let floor = total * 1e-12;
    let disc_mean = if m < k { lam[m..].iter().sum::<f64>() / (k - m) as f64 } else { 0.0 };
    (0..n)
        .map(|i| {
            let x: Vec<f64> = rows[i].iter().zip(&mu).map(|(a, b)| a - b).collect();
            let proj = |slot: usize| -> f64 { (0..k).map(|r| x[r] * vecs[r][order[slot]]).sum() };
            let mut s = 0.0;
            for slot in 0..m {
                if lam[slot] > floor {
                    s += proj(slot).powi(2) / lam[slot];
                }
            }
            if disc_mean > floor {
                s += (m..k).map(|slot| proj(slot).powi(2)).sum::<f64>() / disc_mean;
            }
            s
        })
        .collect()
}

/// COPOD with tie-averaged empirical CDFs counted directly.
pub fn oracle_copod(rows: &Rows) -> Vec<f64> {
    let n = rows.len();
    let nf = n as f64;
    let mut left = vec![0.0; n];
    let mut right = vec![0.0; n];
    let mut skewed = vec![0.0; n];
    for j in 0..rows[0].len() {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let m = col.iter().sum::<f64>() / nf;
        let m2 = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nf;
        let m3 = col.iter().map(|v| (v - m).powi(3)).sum::<f64>() / nf;
        let skew = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
        for i in 0..n {
            let less = col.iter().filter(|&&v| v < col[i]).count() as f64;
            let equal = col.iter().filter(|&&v| v == col[i]).count() as f64;
            let rank = less + (equal + 1.0) / 2.0;
            let greater_rank = nf + 1.0 - rank;
            let l = -(rank / nf).ln();
            let r = -(greater_rank / nf).ln();
            left[i] += l;
            right[i] += r;
            skewed[i] += if skew.abs() <= 1e-9 {
                (l + r) / 2.0
            } else if skew < 0.0 {
                l
            } else {
                r
            };
        }
    }
    (0..n).map(|i| left[i].max(right[i]).max(skewed[i])).collect()
}

/// Fast ABOD: negated population variance of the distance-weighted angle
/// term over all neighbour pairs.
pub fn oracle_abod(rows: &Rows, k: usize) -> Vec<f64> {
    let k = k.max(2).min(rows.len() - 1);
    (0..rows.len())
        .map(|i| {
            let nb = neighbors(rows, i, k);
            let mut terms = Vec::new();
            for a in 0..nb.len() {
                for b in a + 1..nb.len() {
                    if nb[a].1 < 1e-12 || nb[b].1 < 1e-12 {
                        continue;
                    }
                    let va: Vec<f64> = rows[nb[a].0].iter().zip(&rows[i]).map(|(x, y)| x - y).collect();
                    let vb: Vec<f64> = rows[nb[b].0].iter().zip(&rows[i]).map(|(x, y)| x - y).collect();
                    let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
                    let na: f64 = va.iter().map(|x| x * x).sum();
                    let nb2: f64 = vb.iter().map(|x| x * x).sum();
                    terms.push(dot / (na * nb2));
                }
            }
            if terms.is_empty() {
                return 0.0;
            }
            let m = terms.iter().sum::<f64>() / terms.len() as f64;
            -terms.iter().map(|t| (t - m).powi(2)).sum::<f64>() / terms.len() as f64
        })
        .collect()
}

// ---------- metrics ----------

/// Exact pairwise AUC: (#pos>neg + ½·#ties) / (P·N).
pub fn oracle_auc_exact(scores: &[f64], labels: &[u8]) -> BigRational {
    let (mut wins, mut ties, mut pairs) = (0i64, 0i64, 0i64);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1;
                if si > sj {
                    wins += 1;
                } else if si == sj {
                    ties += 1;
                }
            }
        }
    }
    BigRational::new((2 * wins + ties).into(), (2 * pairs).into())
}

pub fn oracle_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

/// AP = Σ_k (R(k) − R(k−1))·P(k) over the ranking by descending score,
/// ties in original order.
pub fn oracle_ap(scores: &[f64], labels: &[u8]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let total: f64 = labels.iter().map(|&l| f64::from(l)).sum();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 1..=idx.len() {
        let tp: f64 = idx[..k].iter().map(|&i| f64::from(labels[i])).sum();
        let precision = tp / k as f64;
        let recall = tp / total;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Random scores with deliberate ties and labels with both classes.
pub fn metric_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.random_range(2..=30);
    let levels = rng.random_range(1..=n);
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / 4.0).collect();
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
    labels[0] = 1;
    labels[n - 1] = 0;
    (scores, labels)
}

// ---------- Student t ----------

/// ln Γ(x) via the Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
pub fn oracle_two_sided_p(t: f64, df: f64) -> f64 {
    inc_beta(df / 2.0, 0.5, df / (df + t * t))
}
