//! Comparisons between retained feature sets.

use std::collections::BTreeSet;
use std::io::Write;

use flate2::write::DeflateEncoder;
use flate2::Compression;
use rayon::prelude::*;

use crate::corpus_io::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numfmt;
use crate::pruning::RetainedFeatureSet;

/// DEFLATE level used by [`compression_ratio`].
pub const COMPRESSION_LEVEL: u32 = 9;

/// Size-matched Dice coefficient over the importance-ranked retained indices.
///
/// The larger set is truncated to its `n` top-ranked features, `n` being the
/// size of the smaller set, so the result is `|U ∩ V| / n`.
pub fn dice(u: &RetainedFeatureSet, v: &RetainedFeatureSet) -> Result<f64> {
    if u.dims() != v.dims() {
        return Err(Error::Domain(format!(
            "retained sets come from different feature spaces ({} vs {})",
            u.dims(),
            v.dims()
        )));
    }
    dice_ranked(&u.indices, &v.indices)
}

/// [`dice`] on plain ranked index lists.
pub fn dice_ranked(u: &[usize], v: &[usize]) -> Result<f64> {
    if u.is_empty() || v.is_empty() {
        return Err(Error::Domain("dice needs non-empty sets".into()));
    }
    let n = u.len().min(v.len());
    let a: BTreeSet<usize> = u[..n].iter().copied().collect();
    let shared = v[..n].iter().filter(|f| a.contains(f)).count();
    Ok((2 * shared) as f64 / (2 * n) as f64)
}

/// Labelled symmetric matrix of pairwise Dice coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct DiceMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl DiceMatrix {
    pub fn build(runs: &[(String, RetainedFeatureSet)]) -> Result<Self> {
        let n = runs.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let scores = pairs
            .par_iter()
            .map(|&(i, j)| dice(&runs[i].1, &runs[j].1))
            .collect::<Result<Vec<_>>>()?;
        let mut values = vec![vec![1.0; n]; n];
        for (&(i, j), s) in pairs.iter().zip(scores) {
            values[i][j] = s;
            values[j][i] = s;
        }
        Ok(Self {
            labels: runs.iter().map(|(l, _)| l.clone()).collect(),
            values,
        })
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "run,{}", self.labels.join(","))?;
        for (l, row) in self.labels.iter().zip(&self.values) {
            let cells: Vec<String> = row.iter().map(|v| numfmt::full(Some(*v))).collect();
            writeln!(out, "{l},{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// `counts[c]` is the number of features appearing in exactly `c` of `sets`.
pub fn frequency_histogram(sets: &[RetainedFeatureSet], d: usize) -> Result<Vec<usize>> {
    if let Some(s) = sets.iter().find(|s| s.dims() != d) {
        return Err(Error::Domain(format!(
            "retained set over {} features in a histogram over {d}",
            s.dims()
        )));
    }
    let lists: Vec<&[usize]> = sets.iter().map(|s| s.indices.as_slice()).collect();
    frequency_histogram_of(&lists, d)
}

/// [`frequency_histogram`] on plain index lists.
pub fn frequency_histogram_of(sets: &[&[usize]], d: usize) -> Result<Vec<usize>> {
    let mut appearances = vec![0usize; d];
    for s in sets {
        for &f in *s {
            if f >= d {
                return Err(Error::Domain(format!("feature {f} out of range for d = {d}")));
            }
            appearances[f] += 1;
        }
    }
    let mut counts = vec![0usize; sets.len() + 1];
    for a in appearances {
        counts[a] += 1;
    }
    Ok(counts)
}

pub fn write_histogram<W: Write>(counts: &[usize], mut out: W) -> std::io::Result<()> {
    writeln!(out, "appearances,features")?;
    for (c, n) in counts.iter().enumerate() {
        writeln!(out, "{c},{n}")?;
    }
    Ok(())
}

/// Canonical text form of the column-restricted matrix: one row per word,
/// values at six significant digits separated by single spaces, LF-terminated.
pub fn canonical_text(emb: &EmbeddingTable, subset: &[usize]) -> Vec<u8> {
    let mut out = String::new();
    for row in emb.values().rows() {
        let cells: Vec<String> = subset
            .iter()
            .map(|&f| numfmt::sig(row[f], numfmt::EMBEDDING_SIG_DIGITS))
            .collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out.into_bytes()
}

/// Compressed size over raw size of [`canonical_text`], using raw DEFLATE
/// (LZ77 + Huffman) at [`COMPRESSION_LEVEL`].
///
/// Sensitive to row order; pass canonically ordered tables.
pub fn compression_ratio(emb: &EmbeddingTable, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::Domain("compression of an empty feature subset".into()));
    }
    if let Some(&f) = subset.iter().find(|&&f| f >= emb.dims()) {
        return Err(Error::Domain(format!("feature {f} out of range")));
    }
    let raw = canonical_text(emb, subset);
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::new(COMPRESSION_LEVEL));
    enc.write_all(&raw)?;
    let packed = enc.finish()?;
    Ok(packed.len() as f64 / raw.len() as f64)
}

/// The `k` words with the largest summed value over `features`, highest
/// first; equal sums are ordered alphabetically.
pub fn top_activation_words(emb: &EmbeddingTable, features: &[usize], k: usize) -> Result<Vec<String>> {
    if features.is_empty() {
        return Err(Error::Domain("no features given".into()));
    }
    if k > emb.len() {
        return Err(Error::Domain(format!("k = {k} exceeds vocabulary size {}", emb.len())));
    }
    if let Some(&f) = features.iter().find(|&&f| f >= emb.dims()) {
        return Err(Error::Domain(format!("feature {f} out of range")));
    }
    let m = emb.values();
    let mut scored: Vec<(f64, &String)> = emb
        .vocab()
        .iter()
        .enumerate()
        .map(|(i, w)| (features.iter().map(|&f| m[[i, f]]).sum(), w))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().take(k).map(|(_, w)| w.clone()).collect())
}

/// Features that appear in none of `sets`.
pub fn never_retained(sets: &[RetainedFeatureSet], d: usize) -> Vec<usize> {
    let used: BTreeSet<usize> = sets.iter().flat_map(|s| s.indices.iter().copied()).collect();
    (0..d).filter(|f| !used.contains(f)).collect()
}
