//! Reference implementations used as test oracles. They are deliberately
//! direct transcriptions of the textbook definitions and share no code with
//! the library.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rank of each value: 1 + number of smaller values + half the number of
/// other equal values.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let less = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson r; `None` when either side has no variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&ranks(x), &ranks(y))
}

/// Pearson via the one-pass sums formula, for tolerance-based parity checks.
pub fn pearson_sums(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    let num = n * sxy - sx * sy;
    let den = ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
    (den > 0.0).then(|| (num / den).clamp(-1.0, 1.0))
}

/// Cosine over the given features (ascending), for every word pair i < j.
pub fn cosine_upper(rows: &[Vec<f64>], features: &[usize]) -> Option<Vec<f64>> {
    let mut feats = features.to_vec();
    feats.sort_unstable();
    let norm = |r: &Vec<f64>| feats.iter().map(|&f| r[f] * r[f]).sum::<f64>().sqrt();
    let mut out = Vec::new();
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let (ni, nj) = (norm(&rows[i]), norm(&rows[j]));
            if ni == 0.0 || nj == 0.0 {
                return None;
            }
            let dot: f64 = feats.iter().map(|&f| rows[i][f] * rows[j][f]).sum();
            out.push(dot / (ni * nj));
        }
    }
    Some(out)
}

pub struct PruneOracle {
    pub d_scores: Vec<f64>,
    pub order: Vec<usize>,
    pub retained: Vec<usize>,
    pub achieved: f64,
}

/// The prune algorithm as stated: score each feature by the alignment lost
/// when it alone is removed, sort by that loss (largest first, lower index
/// on ties), then keep the best-scoring prefix (shortest on ties).
pub fn prune(rows: &[Vec<f64>], human_upper: &[f64]) -> PruneOracle {
    let d = rows[0].len();
    let rho = |feats: &[usize]| cosine_upper(rows, feats).and_then(|z| spearman(&z, human_upper));
    let all: Vec<usize> = (0..d).collect();
    let full = rho(&all).expect("full set valid");
    let mut d_scores = Vec::new();
    for f in 0..d {
        let without: Vec<usize> = all.iter().copied().filter(|&g| g != f).collect();
        d_scores.push(full - rho(&without).expect("leave-one-out valid"));
    }
    let mut order = all.clone();
    // insertion sort: stable, so equal scores keep index order
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && d_scores[order[j - 1]] < d_scores[order[j]] {
            order.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for s in 1..=d {
        if let Some(r) = rho(&order[..s]) {
            match best {
                Some((_, b)) if r <= b => {}
                _ => best = Some((s, r)),
            }
        }
    }
    let (size, achieved) = best.expect("some prefix valid");
    PruneOracle { retained: order[..size].to_vec(), d_scores, order, achieved }
}

/// Best alignment over every non-empty feature subset.
pub fn exhaustive_best(rows: &[Vec<f64>], human_upper: &[f64]) -> f64 {
    let d = rows[0].len();
    let mut best = f64::NEG_INFINITY;
    for mask in 1u32..(1 << d) {
        let feats: Vec<usize> = (0..d).filter(|f| mask & (1 << f) != 0).collect();
        if let Some(r) = cosine_upper(rows, &feats).and_then(|z| spearman(&z, human_upper)) {
            best = best.max(r);
        }
    }
    best
}

/// ln Γ by the Lanczos approximation (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
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

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let num = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        d = 1.0 + num * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = 1.0 + num / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        h *= d * c;
        let num = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        d = 1.0 + num * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = 1.0 + num / c;
        c = if c.abs() < tiny { tiny } else { c };
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

/// Paired t statistic and two-sided p for the mean of `diffs`.
pub fn paired_t(diffs: &[f64]) -> (f64, f64) {
    let n = diffs.len() as f64;
    let s: f64 = diffs.iter().sum();
    let ss: f64 = diffs.iter().map(|d| d * d).sum();
    let var = (ss - s * s / n) / (n - 1.0);
    let t = (s / n) / (var / n).sqrt();
    let df = n - 1.0;
    let p = inc_beta(df / 2.0, 0.5, df / (df + t * t));
    (t, p)
}

/// Average-linkage agglomeration by brute force: every step recomputes the
/// mean pairwise leaf distance between all current clusters.
/// Returns `(sorted leaf labels of the merged cluster, height)` per step.
pub fn average_linkage(labels: &[&str], dist: &[Vec<f64>]) -> Vec<(Vec<String>, f64)> {
    let mut clusters: Vec<Vec<usize>> = (0..labels.len()).map(|i| vec![i]).collect();
    let mut steps = Vec::new();
    while clusters.len() > 1 {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let mut total = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        total += dist[i][j];
                    }
                }
                let avg = total / (clusters[a].len() * clusters[b].len()) as f64;
                if best.is_none_or(|(_, _, h)| avg < h - 1e-12) {
                    best = Some((a, b, avg));
                }
            }
        }
        let (a, b, h) = best.unwrap();
        let merged: Vec<usize> = clusters[a].iter().chain(&clusters[b]).copied().collect();
        let mut names: Vec<String> = merged.iter().map(|&i| labels[i].to_string()).collect();
        names.sort();
        steps.push((names, h));
        clusters.remove(b);
        clusters[a] = merged;
    }
    steps
}

/// Random vector with some values snapped to a coarse grid so ties occur.
pub fn vector_with_ties<R: Rng>(r: &mut R, n: usize) -> Vec<f64> {
    let grid = r.random_bool(0.5);
    (0..n)
        .map(|_| {
            let v: f64 = r.random_range(-3.0..3.0);
            if grid || r.random_bool(0.3) {
                (v * 2.0).round() / 2.0
            } else {
                v
            }
        })
        .collect()
}
