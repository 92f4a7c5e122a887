//! Similarity matrices and rank alignment.
//!
//! Model similarities are cosines between embedding rows (optionally
//! restricted to a feature subset); human similarities are group means of
//! per-participant z-scored ratings. Alignment between the two is Spearman's
//! rho over the strict upper triangles, flattened row-major.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use ndarray::Array2;

use crate::corpus_io::{pair_key, EmbeddingTable, JudgmentDataset};
use crate::error::{Error, Result};
use crate::numfmt;

/// Length of the strict upper triangle of a `k × k` matrix.
pub fn upper_len(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

/// A symmetric word × word similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    words: Vec<String>,
    values: Array2<f64>,
}

impl SimilarityMatrix {
    pub fn new(words: Vec<String>, values: Array2<f64>) -> Result<Self> {
        let k = words.len();
        if values.dim() != (k, k) {
            return Err(Error::Shape {
                expected: k,
                found: values.nrows(),
            });
        }
        for i in 0..k {
            for j in (i + 1)..k {
                if values[[i, j]] != values[[j, i]] {
                    return Err(Error::Domain(format!(
                        "similarity matrix is not symmetric at ({}, {})",
                        words[i], words[j]
                    )));
                }
            }
        }
        Ok(Self { words, values })
    }

    /// Builds a matrix from its upper triangle, with `diagonal` on the diagonal.
    pub fn from_upper(words: Vec<String>, upper: &[f64], diagonal: f64) -> Result<Self> {
        let k = words.len();
        if upper.len() != upper_len(k) {
            return Err(Error::LengthMismatch {
                left: upper.len(),
                right: upper_len(k),
            });
        }
        let mut values = Array2::from_elem((k, k), diagonal);
        let mut it = upper.iter();
        for i in 0..k {
            for j in (i + 1)..k {
                let v = *it.next().expect("length checked");
                values[[i, j]] = v;
                values[[j, i]] = v;
            }
        }
        Ok(Self { words, values })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Strict upper triangle, row-major.
    pub fn upper(&self) -> Vec<f64> {
        let k = self.len();
        let mut out = Vec::with_capacity(upper_len(k));
        for i in 0..k {
            for j in (i + 1)..k {
                out.push(self.values[[i, j]]);
            }
        }
        out
    }

    /// Sub-matrix over `keep` (indices into this matrix), in the given order.
    pub fn submatrix(&self, keep: &[usize]) -> SimilarityMatrix {
        let words = keep.iter().map(|&i| self.words[i].clone()).collect();
        let values = Array2::from_shape_fn((keep.len(), keep.len()), |(a, b)| {
            self.values[[keep[a], keep[b]]]
        });
        SimilarityMatrix { words, values }
    }

    /// Square delimited table with word headers.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "word,{}", self.words.join(","))?;
        for (w, row) in self.words.iter().zip(self.values.rows()) {
            let cells: Vec<String> = row.iter().map(|v| numfmt::full(Some(*v))).collect();
            writeln!(out, "{w},{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn read<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().from_reader(source);
        let headers = reader
            .headers()
            .map_err(|e| Error::Format { line: 1, message: e.to_string() })?
            .clone();
        let words: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let k = words.len();
        let mut values = Array2::zeros((k, k));
        let mut rows = 0;
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Format { line: i + 2, message: e.to_string() })?;
            if i >= k || rec.len() != k + 1 || rec[0] != words[i] {
                return Err(Error::Format {
                    line: i + 2,
                    message: "row does not match the header".into(),
                });
            }
            for j in 0..k {
                values[[i, j]] = rec[j + 1].parse().map_err(|_| Error::Format {
                    line: i + 2,
                    message: format!("`{}` is not a number", &rec[j + 1]),
                })?;
            }
            rows += 1;
        }
        if rows != k {
            return Err(Error::Shape { expected: k, found: rows });
        }
        SimilarityMatrix::new(words, values)
    }
}

fn checked_features(d: usize, features: &[usize]) -> Result<Vec<usize>> {
    if features.is_empty() {
        return Err(Error::Domain("feature subset is empty".into()));
    }
    let mut sorted = features.to_vec();
    sorted.sort_unstable();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Domain(format!("feature {} listed twice", w[0])));
    }
    if let Some(&f) = sorted.last().filter(|&&f| f >= d) {
        return Err(Error::Domain(format!("feature {f} out of range for d = {d}")));
    }
    Ok(sorted)
}

/// Upper triangle of the cosine matrix over `features`.
///
/// Dot products and norms accumulate over the features in ascending index
/// order regardless of the order in which `features` is given, so any two
/// calls with the same set are bit-identical.
pub fn cosine_upper(emb: &EmbeddingTable, features: &[usize]) -> Result<Vec<f64>> {
    let sorted = checked_features(emb.dims(), features)?;
    let m = emb.values();
    let n = emb.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| sorted.iter().map(|&f| m[[i, f]]).collect())
        .collect();
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&x| x == 0.0) {
        return Err(Error::DegenerateVector(emb.vocab()[i].clone()));
    }
    let mut out = Vec::with_capacity(upper_len(n));
    for i in 0..n {
        for j in (i + 1)..n {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            out.push(dot / (norms[i] * norms[j]));
        }
    }
    Ok(out)
}

/// Pairwise cosine similarity of the embedding rows, optionally restricted to
/// a subset of feature columns. The diagonal is exactly 1.
pub fn cosine_matrix(emb: &EmbeddingTable, feature_subset: Option<&[usize]>) -> Result<SimilarityMatrix> {
    let all: Vec<usize>;
    let features = match feature_subset {
        Some(f) => f,
        None => {
            all = (0..emb.dims()).collect();
            &all
        }
    };
    let upper = cosine_upper(emb, features)?;
    SimilarityMatrix::from_upper(emb.vocab().to_vec(), &upper, 1.0)
}

/// How each participant's ratings are put on a common scale before
/// averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `(r − mean) / sd` over the participant's available pairs, population SD.
    #[default]
    ZScore,
    /// Raw ratings.
    Raw,
}

/// Z-scores `values` with the population SD. `None` when the SD is zero.
pub fn zscores(values: &[f64]) -> Option<Vec<f64>> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    (sd > 0.0).then(|| values.iter().map(|v| (v - mean) / sd).collect())
}

/// Group similarity matrix: per-pair mean of the participants' normalized
/// ratings. The diagonal is 0 and carries no meaning.
pub fn group_similarity(dataset: &JudgmentDataset) -> Result<SimilarityMatrix> {
    group_similarity_with(dataset, Normalization::ZScore)
}

pub fn group_similarity_with(dataset: &JudgmentDataset, norm: Normalization) -> Result<SimilarityMatrix> {
    let k = dataset.words.len();
    let mut sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for p in &dataset.participants {
        let raw: Vec<f64> = p.ratings.values().copied().collect();
        let scaled = match norm {
            Normalization::ZScore => {
                zscores(&raw).ok_or_else(|| Error::DegenerateParticipant(p.id.clone()))?
            }
            Normalization::Raw => raw,
        };
        for (key, z) in p.ratings.keys().zip(scaled) {
            let e = sums.entry(*key).or_insert((0.0, 0));
            e.0 += z;
            e.1 += 1;
        }
    }
    let mut upper = Vec::with_capacity(upper_len(k));
    for i in 0..k {
        for j in (i + 1)..k {
            match sums.get(&pair_key(i, j)) {
                Some(&(s, c)) => upper.push(s / c as f64),
                None => {
                    return Err(Error::UnratedPair(
                        dataset.words[i].clone(),
                        dataset.words[j].clone(),
                    ))
                }
            }
        }
    }
    SimilarityMatrix::from_upper(dataset.words.clone(), &upper, 0.0)
}

/// Fractional ranks (1-based); tied values share the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Pearson product-moment correlation, clamped to [−1, 1].
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than 2 observations"));
    }
    if is_constant(a) || is_constant(b) {
        return Err(Error::UndefinedCorrelation("constant input vector"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance"));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 3 {
        return Err(Error::UndefinedCorrelation("fewer than 3 observations"));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

/// A fixed target vector with its ranks cached, for scoring many candidate
/// vectors against the same human matrix.
#[derive(Debug, Clone)]
pub struct RankTarget {
    ranks: Vec<f64>,
}

impl RankTarget {
    pub fn new(target: &[f64]) -> Result<Self> {
        if target.len() < 3 {
            return Err(Error::UndefinedCorrelation("fewer than 3 observations"));
        }
        if is_constant(target) {
            return Err(Error::UndefinedCorrelation("constant input vector"));
        }
        Ok(Self {
            ranks: average_ranks(target),
        })
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Same value as `spearman(candidate, target)`, bit for bit.
    pub fn rho(&self, candidate: &[f64]) -> Result<f64> {
        if candidate.len() != self.ranks.len() {
            return Err(Error::LengthMismatch {
                left: candidate.len(),
                right: self.ranks.len(),
            });
        }
        pearson(&average_ranks(candidate), &self.ranks)
    }
}

/// Spearman alignment between a model matrix and a human matrix over the
/// same words.
pub fn alignment(z: &SimilarityMatrix, h: &SimilarityMatrix) -> Result<f64> {
    if z.words() != h.words() {
        return Err(Error::AlignmentDomain);
    }
    spearman(&z.upper(), &h.upper())
}
