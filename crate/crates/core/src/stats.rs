//! Scoring and comparing probing outcomes.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::numfmt;
use crate::plsr::PredictionMatrix;
use crate::simkit::{pearson, spearman};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    #[default]
    Pearson,
    Spearman,
}

impl CorrelationKind {
    /// `None` where the correlation is undefined.
    pub fn correlate(self, a: &[f64], b: &[f64]) -> Result<Option<f64>> {
        let r = match self {
            CorrelationKind::Pearson => pearson(a, b),
            CorrelationKind::Spearman => spearman(a, b),
        };
        match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedCorrelation(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Per-dimension and per-word agreement between predictions and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyProfile {
    pub label: String,
    pub dims: Vec<String>,
    pub words: Vec<String>,
    /// Correlation of each predicted column with its true column.
    pub per_dim_r: Vec<Option<f64>>,
    /// Correlation of each predicted row with its true row.
    pub per_word_r: Vec<Option<f64>>,
}

fn mean_defined(v: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = v.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

impl AccuracyProfile {
    pub fn mean_dim_r(&self) -> Option<f64> {
        mean_defined(&self.per_dim_r)
    }

    pub fn mean_word_r(&self) -> Option<f64> {
        mean_defined(&self.per_word_r)
    }

    /// Mean per-dimension correlation within each domain. `dim_domain[j]` is
    /// the domain of dimension `j`.
    pub fn domain_means(&self, dim_domain: &[usize], n_domains: usize) -> Vec<Option<f64>> {
        (0..n_domains)
            .map(|d| {
                let members: Vec<Option<f64>> = self
                    .per_dim_r
                    .iter()
                    .zip(dim_domain)
                    .filter(|(_, &dd)| dd == d)
                    .map(|(r, _)| *r)
                    .collect();
                mean_defined(&members)
            })
            .collect()
    }

    pub fn write_dims<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "dimension,r")?;
        for (d, r) in self.dims.iter().zip(&self.per_dim_r) {
            writeln!(out, "{d},{}", numfmt::full(*r))?;
        }
        Ok(())
    }

    pub fn write_words<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "word,r")?;
        for (w, r) in self.words.iter().zip(&self.per_word_r) {
            writeln!(out, "{w},{}", numfmt::full(*r))?;
        }
        Ok(())
    }
}

/// Correlates predictions with ground truth by column and by row.
pub fn accuracy_profile(label: &str, pm: &PredictionMatrix, kind: CorrelationKind) -> Result<AccuracyProfile> {
    if pm.values.dim() != pm.ground_truth.dim() {
        return Err(Error::Domain("predictions and ground truth differ in shape".into()));
    }
    let per_dim_r = (0..pm.values.ncols())
        .map(|j| {
            let p = pm.values.column(j).to_vec();
            let t = pm.ground_truth.column(j).to_vec();
            kind.correlate(&p, &t)
        })
        .collect::<Result<_>>()?;
    let per_word_r = (0..pm.values.nrows())
        .map(|i| {
            let p = pm.values.row(i).to_vec();
            let t = pm.ground_truth.row(i).to_vec();
            kind.correlate(&p, &t)
        })
        .collect::<Result<_>>()?;
    Ok(AccuracyProfile {
        label: label.to_string(),
        dims: pm.dims.clone(),
        words: pm.words.clone(),
        per_dim_r,
        per_word_r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sidedness {
    #[default]
    TwoSided,
    /// Alternative: the mean difference is positive.
    Greater,
}

/// Paired-sample t-test on a vector of differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedT {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    pub mean_diff: f64,
}

/// Paired t-test of `diffs` against zero mean.
///
/// All-zero differences give `t = 0`, `p = 1`. Constant non-zero differences
/// have no variance and are a [`Error::DegenerateTest`].
pub fn paired_t(label: &str, diffs: &[f64], sides: Sidedness) -> Result<PairedT> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::Domain(format!("paired t-test needs 2 pairs, got {n}")));
    }
    let df = n - 1;
    let mean = diffs.iter().sum::<f64>() / n as f64;
    if diffs.iter().all(|d| *d == 0.0) {
        return Ok(PairedT { t: 0.0, df, p: 1.0, mean_diff: 0.0 });
    }
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / df as f64;
    if var == 0.0 || diffs.iter().all(|d| *d == diffs[0]) {
        return Err(Error::DegenerateTest(label.to_string()));
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Domain(e.to_string()))?;
    let p = match sides {
        Sidedness::TwoSided => 2.0 * dist.cdf(-t.abs()),
        Sidedness::Greater => dist.sf(t),
    };
    Ok(PairedT { t, df, p: p.min(1.0), mean_diff: mean })
}

/// `flag_i = p_i < alpha / m`.
pub fn bonferroni(p_values: &[f64], alpha: f64, m: usize) -> Result<Vec<bool>> {
    if m == 0 {
        return Err(Error::Domain("Bonferroni needs m ≥ 1".into()));
    }
    let threshold = bonferroni_threshold(alpha, m);
    Ok(p_values.iter().map(|&p| p < threshold).collect())
}

pub fn bonferroni_threshold(alpha: f64, m: usize) -> f64 {
    alpha / m as f64
}

/// Outcome of one domain's comparison.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainOutcome {
    Tested { test: PairedT, significant: bool },
    /// Differences were constant and non-zero.
    Degenerate { mean_diff: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainTest {
    pub domain: String,
    pub outcome: DomainOutcome,
}

/// Per-domain paired t-tests on absolute prediction errors of two groups.
///
/// The tested difference per word is `|pred_b − truth| − |pred_a − truth|`,
/// so a positive `t` means group A's predictions are closer to the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyReport {
    pub label_a: String,
    pub label_b: String,
    pub alpha: f64,
    /// Number of contrasts in the Bonferroni correction.
    pub contrasts: usize,
    pub sides: Sidedness,
    pub domains: Vec<DomainTest>,
}

impl DiscrepancyReport {
    pub fn t_values(&self) -> Vec<Option<f64>> {
        self.domains
            .iter()
            .map(|d| match &d.outcome {
                DomainOutcome::Tested { test, .. } => Some(test.t),
                DomainOutcome::Degenerate { .. } => None,
            })
            .collect()
    }

    /// One row per domain: `domain,t,df,p,significant,status`.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "domain,t,df,p,significant,status")?;
        for d in &self.domains {
            match &d.outcome {
                DomainOutcome::Tested { test, significant } => writeln!(
                    out,
                    "{},{},{},{},{},ok",
                    d.domain,
                    numfmt::full(Some(test.t)),
                    test.df,
                    numfmt::full(Some(test.p)),
                    significant
                )?,
                DomainOutcome::Degenerate { .. } => {
                    writeln!(out, "{},NA,NA,NA,false,degenerate", d.domain)?
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyOptions {
    pub alpha: f64,
    pub sides: Sidedness,
}

impl Default for DiscrepancyOptions {
    fn default() -> Self {
        Self { alpha: 0.05, sides: Sidedness::TwoSided }
    }
}

/// Compares two groups' condensed prediction matrices domain by domain.
pub fn discrepancy_test(
    label_a: &str,
    pm_a: &PredictionMatrix,
    label_b: &str,
    pm_b: &PredictionMatrix,
    opts: &DiscrepancyOptions,
) -> Result<DiscrepancyReport> {
    if pm_a.words != pm_b.words || pm_a.dims != pm_b.dims {
        return Err(Error::Domain("prediction matrices have different word or domain axes".into()));
    }
    if pm_a.ground_truth != pm_b.ground_truth {
        return Err(Error::Domain("prediction matrices are bound to different ground truth".into()));
    }
    if pm_a.values.dim() != pm_b.values.dim() {
        return Err(Error::Domain("prediction matrices differ in shape".into()));
    }
    let contrasts = pm_a.dims.len();
    let threshold = bonferroni_threshold(opts.alpha, contrasts.max(1));
    let mut domains = Vec::with_capacity(contrasts);
    for (j, name) in pm_a.dims.iter().enumerate() {
        let truth = pm_a.ground_truth.column(j);
        let diffs: Vec<f64> = (0..truth.len())
            .map(|i| {
                let ea = (pm_a.values[[i, j]] - truth[i]).abs();
                let eb = (pm_b.values[[i, j]] - truth[i]).abs();
                eb - ea
            })
            .collect();
        let outcome = match paired_t(name, &diffs, opts.sides) {
            Ok(test) => DomainOutcome::Tested { significant: test.p < threshold, test },
            Err(Error::DegenerateTest(_)) => DomainOutcome::Degenerate { mean_diff: diffs[0] },
            Err(e) => return Err(e),
        };
        domains.push(DomainTest { domain: name.clone(), outcome });
    }
    Ok(DiscrepancyReport {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        alpha: opts.alpha,
        contrasts,
        sides: opts.sides,
        domains,
    })
}

/// One agglomeration step. Leaves are `0..n`; the cluster formed at step `s`
/// gets id `n + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub labels: Vec<String>,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Nested-list rendering, e.g. `(0.5 (0 a b) c)`: each node lists its
    /// merge height followed by its two children.
    pub fn to_nested(&self) -> String {
        let n = self.labels.len();
        if n == 1 {
            return self.labels[0].clone();
        }
        fn render(d: &Dendrogram, id: usize, out: &mut String) {
            let n = d.labels.len();
            if id < n {
                out.push_str(&d.labels[id]);
            } else {
                let m = &d.merges[id - n];
                out.push('(');
                out.push_str(&numfmt::full(Some(m.height)));
                out.push(' ');
                render(d, m.left, out);
                out.push(' ');
                render(d, m.right, out);
                out.push(')');
            }
        }
        let mut s = String::new();
        render(self, n + self.merges.len() - 1, &mut s);
        s
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.to_nested())?;
        writeln!(out)?;
        writeln!(out, "step,left,right,height,size")?;
        for (s, m) in self.merges.iter().enumerate() {
            writeln!(out, "{},{},{},{},{}", s, m.left, m.right, numfmt::full(Some(m.height)), m.size)?;
        }
        Ok(())
    }
}

/// `1 − r` between per-dimension accuracy vectors.
pub fn correlation_distance(a: &AccuracyProfile, b: &AccuracyProfile) -> Result<f64> {
    let va = defined_entries(a)?;
    let vb = defined_entries(b)?;
    match pearson(&va, &vb) {
        Ok(r) => Ok(1.0 - r),
        Err(Error::UndefinedCorrelation(_)) => Err(Error::Domain(format!(
            "correlation distance between `{}` and `{}` is undefined",
            a.label, b.label
        ))),
        Err(e) => Err(e),
    }
}

fn defined_entries(p: &AccuracyProfile) -> Result<Vec<f64>> {
    p.per_dim_r
        .iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| Error::UndefinedEntry { label: p.label.clone(), index: i }))
        .collect()
}

/// Average-linkage clustering of profiles under correlation distance.
///
/// Among equally close pairs, the pair whose smallest leaf labels sort first
/// is merged; the child with the smaller label goes left.
pub fn cluster_profiles(profiles: &[AccuracyProfile]) -> Result<Dendrogram> {
    if profiles.len() < 2 {
        return Err(Error::Domain("clustering needs at least 2 profiles".into()));
    }
    let width = profiles[0].per_dim_r.len();
    if let Some(p) = profiles.iter().find(|p| p.per_dim_r.len() != width) {
        return Err(Error::Domain(format!("profile `{}` has a different dimensionality", p.label)));
    }
    for p in profiles {
        defined_entries(p)?;
    }
    let n = profiles.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = correlation_distance(&profiles[i], &profiles[j])?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let labels: Vec<String> = profiles.iter().map(|p| p.label.clone()).collect();
    Ok(average_linkage(&labels, &dist))
}

/// Average linkage on a precomputed distance matrix, with Lance–Williams
/// updates.
pub fn average_linkage(labels: &[String], dist: &[Vec<f64>]) -> Dendrogram {
    let n = labels.len();
    // active clusters: (id, size, smallest leaf label)
    let mut active: Vec<(usize, usize, String)> = (0..n).map(|i| (i, 1, labels[i].clone())).collect();
    let mut d: Vec<Vec<f64>> = dist.to_vec();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    while active.len() > 1 {
        let mut best: Option<(usize, usize)> = None;
        for a in 0..active.len() {
            for b in (a + 1)..active.len() {
                let better = match best {
                    None => true,
                    Some((x, y)) => {
                        let (dab, dxy) = (d[a][b], d[x][y]);
                        dab < dxy || (dab == dxy && pair_key(&active, a, b) < pair_key(&active, x, y))
                    }
                };
                if better {
                    best = Some((a, b));
                }
            }
        }
        let (a, b) = best.expect("at least two clusters");
        let (first, second) = if active[a].2 <= active[b].2 { (a, b) } else { (b, a) };
        let (sa, sb) = (active[a].1, active[b].1);
        let height = d[a][b];
        merges.push(Merge {
            left: active[first].0,
            right: active[second].0,
            height,
            size: sa + sb,
        });
        // merged cluster replaces slot `a`; slot `b` is removed
        #[allow(clippy::needless_range_loop)]
        for c in 0..active.len() {
            if c != a && c != b {
                let v = (sa as f64 * d[a][c] + sb as f64 * d[b][c]) / (sa + sb) as f64;
                d[a][c] = v;
                d[c][a] = v;
            }
        }
        let label = active[a].2.clone().min(active[b].2.clone());
        active[a] = (n + merges.len() - 1, sa + sb, label);
        active.remove(b);
        d.remove(b);
        for row in d.iter_mut() {
            row.remove(b);
        }
    }
    Dendrogram { labels: labels.to_vec(), merges }
}

fn pair_key(active: &[(usize, usize, String)], a: usize, b: usize) -> (&str, &str) {
    let (x, y) = (active[a].2.as_str(), active[b].2.as_str());
    if x <= y {
        (x, y)
    } else {
        (y, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn pm(values: Array2<f64>, truth: Array2<f64>) -> PredictionMatrix {
        PredictionMatrix {
            words: (0..values.nrows()).map(|i| format!("w{i}")).collect(),
            dims: (0..values.ncols()).map(|j| format!("d{j}")).collect(),
            values,
            ground_truth: truth,
        }
    }

    #[test]
    fn perfect_and_reversed_profiles() {
        let truth = array![[1.0, 2.0, 0.5], [2.0, 1.0, 0.1], [3.0, 5.0, 0.7], [0.5, 0.0, 0.2]];
        let prof = accuracy_profile("x", &pm(truth.clone(), truth.clone()), CorrelationKind::Pearson).unwrap();
        assert!(prof.per_dim_r.iter().all(|r| (r.unwrap() - 1.0).abs() < 1e-15));
        assert!(prof.per_word_r.iter().all(|r| (r.unwrap() - 1.0).abs() < 1e-15));
        let neg = truth.mapv(|v| -v);
        let prof = accuracy_profile("x", &pm(neg, truth), CorrelationKind::Pearson).unwrap();
        assert!(prof.per_dim_r.iter().all(|r| (r.unwrap() + 1.0).abs() < 1e-15));
    }

    #[test]
    fn constant_column_is_undefined() {
        let truth = array![[1.0, 2.0], [2.0, 1.0], [3.0, 5.0]];
        let pred = array![[1.0, 7.0], [2.0, 7.0], [3.0, 7.0]];
        let prof = accuracy_profile("x", &pm(pred, truth), CorrelationKind::Pearson).unwrap();
        assert_eq!(prof.per_dim_r[1], None);
        assert_eq!(prof.mean_dim_r(), prof.per_dim_r[0]);
    }

    #[test]
    fn bonferroni_examples() {
        assert_eq!(bonferroni(&[0.01, 0.001], 0.05, 14).unwrap(), vec![false, true]);
        assert_eq!(bonferroni(&[0.04, 0.06], 0.05, 1).unwrap(), vec![true, false]);
        assert!((bonferroni_threshold(0.05, 14) - 0.003_571_428_571_428_571).abs() < 1e-15);
        assert!(bonferroni(&[0.1], 0.05, 0).is_err());
    }

    #[test]
    fn identical_matrices_give_zero_t() {
        let truth = array![[1.0, 2.0], [2.0, 1.0], [3.0, 5.0], [4.0, 4.0]];
        let a = pm(truth.clone() + 0.3, truth.clone());
        let r = discrepancy_test("a", &a, "b", &a, &DiscrepancyOptions::default()).unwrap();
        assert_eq!(r.t_values(), vec![Some(0.0), Some(0.0)]);
        assert!(r.domains.iter().all(|d| matches!(d.outcome, DomainOutcome::Tested { significant: false, .. })));
    }

    #[test]
    fn constant_offset_is_degenerate() {
        let truth = array![[1.0, 2.0], [2.0, 1.0], [3.0, 5.0], [4.0, 4.0]];
        let a = pm(truth.clone(), truth.clone());
        let mut shifted = truth.clone();
        shifted.column_mut(1).mapv_inplace(|v| v + 1.0);
        let b = pm(shifted, truth);
        let r = discrepancy_test("a", &a, "b", &b, &DiscrepancyOptions::default()).unwrap();
        assert_eq!(r.t_values()[0], Some(0.0));
        assert!(matches!(r.domains[1].outcome, DomainOutcome::Degenerate { mean_diff } if mean_diff == 1.0));
        assert!(paired_t("x", &[-1.0, -1.0, -1.0], Sidedness::TwoSided).is_err());
    }

    #[test]
    fn axis_mismatch() {
        let truth = array![[1.0, 2.0], [2.0, 1.0], [3.0, 5.0]];
        let a = pm(truth.clone(), truth.clone());
        let mut b = a.clone();
        b.dims[0] = "other".into();
        assert!(matches!(
            discrepancy_test("a", &a, "b", &b, &DiscrepancyOptions::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn one_sided_p_is_half_two_sided() {
        let diffs = [0.5, 0.2, 0.9, -0.1, 0.4, 0.3];
        let two = paired_t("x", &diffs, Sidedness::TwoSided).unwrap();
        let one = paired_t("x", &diffs, Sidedness::Greater).unwrap();
        assert!((one.p * 2.0 - two.p).abs() < 1e-14);
        assert_eq!(two.df, 5);
    }

    fn profile(label: &str, r: &[f64]) -> AccuracyProfile {
        AccuracyProfile {
            label: label.into(),
            dims: (0..r.len()).map(|i| i.to_string()).collect(),
            words: vec![],
            per_dim_r: r.iter().map(|v| Some(*v)).collect(),
            per_word_r: vec![],
        }
    }

    #[test]
    fn identical_profiles_merge_at_zero() {
        let d = cluster_profiles(&[profile("a", &[0.1, 0.5, 0.3]), profile("b", &[0.1, 0.5, 0.3])]).unwrap();
        assert_eq!(d.merges.len(), 1);
        assert_eq!(d.merges[0].height, 0.0);
        assert_eq!(d.to_nested(), "(0 a b)");
    }

    #[test]
    fn identical_pair_merges_first() {
        let d = cluster_profiles(&[
            profile("z", &[0.9, 0.1, 0.5, 0.2]),
            profile("anti", &[0.1, 0.9, 0.5, 0.8]),
            profile("y", &[0.9, 0.1, 0.5, 0.2]),
        ])
        .unwrap();
        assert_eq!((d.merges[0].left, d.merges[0].right), (2, 0));
        assert_eq!(d.merges[0].height, 0.0);
        assert!((d.merges[1].height - 2.0).abs() < 1e-12);
        assert_eq!(d.merges[1].size, 3);
    }

    #[test]
    fn undefined_entry_rejected() {
        let mut p = profile("a", &[0.1, 0.2, 0.3]);
        p.per_dim_r[1] = None;
        assert!(matches!(
            cluster_profiles(&[p, profile("b", &[0.3, 0.2, 0.1])]),
            Err(Error::UndefinedEntry { index: 1, .. })
        ));
    }
}
