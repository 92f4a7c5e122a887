//! Supervised feature pruning.
//!
//! Features are scored by how much the alignment with the human matrix drops
//! when each one is left out (`D = rho(all) − rho(all but f)`), ranked by
//! descending `D`, and reinserted one at a time; the prefix with the highest
//! alignment is retained.
//!
//! [`prune_cv`] wraps this in a leave-one-word-out protocol: the test pairs of
//! a fold are the pairs containing the held-out word, scored with all
//! features, the retained features, and size-matched random feature sets.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{EmbeddingTable, JudgmentDataset};
use crate::error::{Error, Result};
use crate::numfmt;
use crate::simkit::{self, cosine_upper, group_similarity_with, Normalization, RankTarget, SimilarityMatrix};

/// Leave-one-feature-out importance scores.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRanking {
    /// Alignment using every feature.
    pub baseline_rho: f64,
    /// `D[f]` for every feature `f`.
    pub scores: Vec<f64>,
    /// Feature indices by descending `D`, lower index first on ties.
    pub order: Vec<usize>,
}

/// Orders features by descending score; equal scores keep ascending index.
pub fn importance_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

fn aligned_rows(emb: &EmbeddingTable, h: &SimilarityMatrix) -> Result<EmbeddingTable> {
    if emb.vocab() == h.words() {
        Ok(emb.clone())
    } else {
        emb.select_words(h.words())
    }
}

fn score_subset(emb: &EmbeddingTable, target: &RankTarget, features: &[usize]) -> Result<f64> {
    target.rho(&cosine_upper(emb, features)?)
}

pub(crate) fn rank_features_with(
    emb: &EmbeddingTable,
    h: &SimilarityMatrix,
    parallel: bool,
) -> Result<FeatureRanking> {
    let d = emb.dims();
    if d < 2 {
        return Err(Error::Domain(format!(
            "ranking needs at least 2 features, got {d}"
        )));
    }
    let emb = aligned_rows(emb, h)?;
    let target = RankTarget::new(&h.upper())?;
    let all: Vec<usize> = (0..d).collect();
    let baseline_rho = score_subset(&emb, &target, &all)?;
    let drop_one = |f: usize| -> Result<f64> {
        let kept: Vec<usize> = (0..d).filter(|&g| g != f).collect();
        Ok(baseline_rho - score_subset(&emb, &target, &kept)?)
    };
    let scores: Vec<f64> = if parallel {
        (0..d).into_par_iter().map(drop_one).collect::<Result<_>>()?
    } else {
        (0..d).map(drop_one).collect::<Result<_>>()?
    };
    let order = importance_order(&scores);
    Ok(FeatureRanking {
        baseline_rho,
        scores,
        order,
    })
}

/// Scores every feature by the alignment lost when it alone is removed.
///
/// `emb` must contain every word of `h`; rows are matched by word.
pub fn rank_features(emb: &EmbeddingTable, h: &SimilarityMatrix) -> Result<FeatureRanking> {
    rank_features_with(emb, h, true)
}

/// Output of [`prune`].
#[derive(Debug, Clone, PartialEq)]
pub struct RetainedFeatureSet {
    /// Retained features, most important first.
    pub indices: Vec<usize>,
    /// Every feature in importance order; `indices` is a prefix of it.
    pub ranking: Vec<usize>,
    /// Per-feature `D`, indexed by feature.
    pub scores: Vec<f64>,
    /// Alignment after reinserting `ranking[..=i]`; `None` where the prefix
    /// leaves some word with a zero vector or yields a constant similarity
    /// vector.
    pub prefix_rho: Vec<Option<f64>>,
    pub baseline_rho: f64,
    pub achieved_rho: f64,
    pub category_label: String,
    pub group_label: String,
}

impl RetainedFeatureSet {
    pub fn dims(&self) -> usize {
        self.ranking.len()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn with_labels(mut self, category: &str, group: &str) -> Self {
        self.category_label = category.to_string();
        self.group_label = group.to_string();
        self
    }

    /// Prefix sizes that were skipped during reinsertion.
    pub fn skipped_prefixes(&self) -> Vec<usize> {
        self.prefix_rho
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_none())
            .map(|(i, _)| i + 1)
            .collect()
    }

    /// Builds the set from a ranking and per-prefix alignments, retaining the
    /// earliest prefix with maximal alignment.
    pub fn from_prefixes(
        ranking: Vec<usize>,
        scores: Vec<f64>,
        prefix_rho: Vec<Option<f64>>,
        baseline_rho: f64,
    ) -> Result<Self> {
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in prefix_rho.iter().enumerate() {
            if let Some(r) = *r {
                if best.is_none_or(|(_, b)| r > b) {
                    best = Some((i + 1, r));
                }
            }
        }
        let (size, achieved_rho) = best.ok_or_else(|| {
            Error::PruningFailure("no prefix admits a valid cosine matrix".into())
        })?;
        Ok(Self {
            indices: ranking[..size].to_vec(),
            ranking,
            scores,
            prefix_rho,
            baseline_rho,
            achieved_rho,
            category_label: String::new(),
            group_label: String::new(),
        })
    }

    /// Writes `rank,feature_index,D,cumulative_rho`, one row per feature.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "rank,feature_index,D,cumulative_rho")?;
        for (rank, (&f, rho)) in self.ranking.iter().zip(&self.prefix_rho).enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                rank + 1,
                f,
                numfmt::full(Some(self.scores[f])),
                numfmt::full(*rho)
            )?;
        }
        Ok(())
    }

    /// Reads a record stream written by [`RetainedFeatureSet::write`]. The
    /// retained prefix is recovered from the cumulative alignments.
    pub fn read<R: Read>(source: R, category: &str, group: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let mut ranking = Vec::new();
        let mut pairs = Vec::new();
        let mut prefix_rho = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Format { line, message: e.to_string() })?;
            let bad = |m: &str| Error::Format { line, message: m.to_string() };
            if rec.len() != 4 {
                return Err(bad("expected 4 columns"));
            }
            let rank: usize = rec[0].parse().map_err(|_| bad("bad rank"))?;
            if rank != i + 1 {
                return Err(bad("ranks must be consecutive from 1"));
            }
            let f: usize = rec[1].parse().map_err(|_| bad("bad feature index"))?;
            let d = numfmt::parse_full(&rec[2]).flatten().ok_or_else(|| bad("bad D"))?;
            let rho = numfmt::parse_full(&rec[3]).ok_or_else(|| bad("bad cumulative_rho"))?;
            ranking.push(f);
            pairs.push((f, d));
            prefix_rho.push(rho);
        }
        let dims = ranking.len();
        let mut scores = vec![f64::NAN; dims];
        for (f, d) in pairs {
            if f >= dims || !scores[f].is_nan() {
                return Err(Error::Format {
                    line: 0,
                    message: format!("feature {f} is out of range or repeated"),
                });
            }
            scores[f] = d;
        }
        let baseline = prefix_rho
            .last()
            .copied()
            .flatten()
            .ok_or_else(|| Error::PruningFailure("full feature set has no alignment".into()))?;
        Ok(Self::from_prefixes(ranking, scores, prefix_rho, baseline)?.with_labels(category, group))
    }
}

fn prefix_alignment(emb: &EmbeddingTable, target: &RankTarget, prefix: &[usize]) -> Result<Option<f64>> {
    match score_subset(emb, target, prefix) {
        Ok(r) => Ok(Some(r)),
        Err(Error::DegenerateVector(_)) | Err(Error::UndefinedCorrelation(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Ranks features, reinserts them in descending importance and keeps the
/// prefix with the highest alignment (earliest on exact ties).
///
/// With a single feature the ranking step is skipped and its score is 0.
pub fn prune(emb: &EmbeddingTable, h: &SimilarityMatrix) -> Result<RetainedFeatureSet> {
    if h.len() < 3 {
        return Err(Error::Domain(format!(
            "pruning needs at least 3 words, got {}",
            h.len()
        )));
    }
    let emb = aligned_rows(emb, h)?;
    let d = emb.dims();
    let target = RankTarget::new(&h.upper())?;
    let (ranking, scores, baseline_rho) = if d == 1 {
        let only = score_subset(&emb, &target, &[0])?;
        (vec![0], vec![0.0], only)
    } else {
        let r = rank_features(&emb, h)?;
        (r.order, r.scores, r.baseline_rho)
    };
    let prefix_rho: Vec<Option<f64>> = (1..=d)
        .into_par_iter()
        .map(|s| prefix_alignment(&emb, &target, &ranking[..s]))
        .collect::<Result<_>>()?;
    let skipped = prefix_rho.iter().filter(|r| r.is_none()).count();
    if skipped > 0 {
        log::debug!("pruning skipped {skipped} of {d} prefix sizes");
    }
    RetainedFeatureSet::from_prefixes(ranking, scores, prefix_rho, baseline_rho)
}

/// Options for [`prune_cv`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub seed: u64,
    /// Random size-matched feature sets drawn per fold.
    pub random_draws: usize,
    /// Recompute the training matrix from participant ratings of training
    /// pairs only; otherwise slice the full-data group matrix.
    pub refit_normalization: bool,
    pub normalization: Normalization,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            random_draws: 100,
            refit_normalization: true,
            normalization: Normalization::ZScore,
        }
    }
}

/// One leave-one-word-out fold.
#[derive(Debug, Clone, PartialEq)]
pub struct CvFold {
    pub target: String,
    /// Test alignment with all features.
    pub base_rho: Option<f64>,
    /// Test alignment with the features retained on the training pairs.
    pub retained_rho: Option<f64>,
    /// Mean test alignment over the valid random draws.
    pub random_rho: Option<f64>,
    pub random_valid_draws: usize,
    pub retained_size: usize,
    /// Alignment achieved on the training pairs.
    pub train_rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneCvReport {
    pub category_label: String,
    pub group_label: String,
    pub folds: Vec<CvFold>,
}

fn mean_defined<I: Iterator<Item = Option<f64>>>(it: I) -> Option<f64> {
    let (sum, n) = it.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl PruneCvReport {
    pub fn mean_base(&self) -> Option<f64> {
        mean_defined(self.folds.iter().map(|f| f.base_rho))
    }

    pub fn mean_retained(&self) -> Option<f64> {
        mean_defined(self.folds.iter().map(|f| f.retained_rho))
    }

    pub fn mean_random(&self) -> Option<f64> {
        mean_defined(self.folds.iter().map(|f| f.random_rho))
    }

    pub fn mean_retained_size(&self) -> f64 {
        self.folds.iter().map(|f| f.retained_size as f64).sum::<f64>() / self.folds.len() as f64
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "target,base_rho,retained_rho,random_rho,random_valid_draws,retained_size,train_rho")?;
        for f in &self.folds {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                f.target,
                numfmt::full(f.base_rho),
                numfmt::full(f.retained_rho),
                numfmt::full(f.random_rho),
                f.random_valid_draws,
                f.retained_size,
                numfmt::full(Some(f.train_rho))
            )?;
        }
        Ok(())
    }

    pub fn read<R: Read>(source: R, category: &str, group: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let mut folds = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Format { line, message: e.to_string() })?;
            let bad = || Error::Format { line, message: "malformed fold row".into() };
            if rec.len() != 7 {
                return Err(bad());
            }
            let opt = |s: &str| numfmt::parse_full(s).ok_or_else(bad);
            folds.push(CvFold {
                target: rec[0].to_string(),
                base_rho: opt(&rec[1])?,
                retained_rho: opt(&rec[2])?,
                random_rho: opt(&rec[3])?,
                random_valid_draws: rec[4].parse().map_err(|_| bad())?,
                retained_size: rec[5].parse().map_err(|_| bad())?,
                train_rho: opt(&rec[6])?.ok_or_else(bad)?,
            });
        }
        Ok(Self {
            category_label: category.to_string(),
            group_label: group.to_string(),
            folds,
        })
    }
}

/// Cosines between `target` and every row in `others`, accumulated in
/// ascending feature order like [`cosine_upper`].
pub fn cosine_to(
    emb: &EmbeddingTable,
    target: usize,
    others: &[usize],
    features: &[usize],
) -> Result<Vec<f64>> {
    let mut sorted = features.to_vec();
    sorted.sort_unstable();
    let m = emb.values();
    let norm = |i: usize| sorted.iter().map(|&f| m[[i, f]] * m[[i, f]]).sum::<f64>().sqrt();
    let nt = norm(target);
    if nt == 0.0 {
        return Err(Error::DegenerateVector(emb.vocab()[target].clone()));
    }
    others
        .iter()
        .map(|&o| {
            let no = norm(o);
            if no == 0.0 {
                return Err(Error::DegenerateVector(emb.vocab()[o].clone()));
            }
            let dot: f64 = sorted.iter().map(|&f| m[[target, f]] * m[[o, f]]).sum();
            Ok(dot / (nt * no))
        })
        .collect()
}

/// Seeded generator for one fold; folds draw from independent streams.
pub fn fold_rng(seed: u64, fold: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fold as u64);
    rng
}

/// Draws `draws` feature subsets of `size` out of `d`, uniformly without
/// replacement, each returned in ascending order.
pub fn random_feature_sets<R: Rng + ?Sized>(
    d: usize,
    size: usize,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if size == 0 || size > d {
        return Err(Error::Domain(format!(
            "random set size {size} must lie in [1, {d}]"
        )));
    }
    if draws == 0 {
        return Err(Error::Domain("at least one random draw is required".into()));
    }
    Ok((0..draws)
        .map(|_| {
            let mut s = rand::seq::index::sample(rng, d, size).into_vec();
            s.sort_unstable();
            s
        })
        .collect())
}

/// Mean score over size-matched random feature sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomBaseline {
    pub mean_rho: Option<f64>,
    pub valid_draws: usize,
    pub draws: usize,
}

/// Scores `draws` random feature sets of `size` with `score` and averages the
/// defined results. `score` returns `None` for a draw whose alignment is
/// undefined.
pub fn random_baseline_with<R, F>(
    d: usize,
    size: usize,
    draws: usize,
    rng: &mut R,
    mut score: F,
) -> Result<RandomBaseline>
where
    R: Rng + ?Sized,
    F: FnMut(&[usize]) -> Result<Option<f64>>,
{
    let sets = random_feature_sets(d, size, draws, rng)?;
    let mut values = Vec::with_capacity(draws);
    for s in &sets {
        values.push(score(s)?);
    }
    Ok(RandomBaseline {
        mean_rho: mean_defined(values.iter().copied()),
        valid_draws: values.iter().flatten().count(),
        draws,
    })
}

/// [`random_baseline_with`] using a generator seeded from `rng_seed`.
pub fn random_baseline<F>(d: usize, size: usize, draws: usize, rng_seed: u64, score: F) -> Result<RandomBaseline>
where
    F: FnMut(&[usize]) -> Result<Option<f64>>,
{
    random_baseline_with(d, size, draws, &mut ChaCha8Rng::seed_from_u64(rng_seed), score)
}

fn test_alignment(
    emb: &EmbeddingTable,
    target: usize,
    others: &[usize],
    human: &RankTarget,
    features: &[usize],
) -> Result<Option<f64>> {
    match cosine_to(emb, target, others, features).and_then(|z| human.rho(&z)) {
        Ok(r) => Ok(Some(r)),
        Err(Error::DegenerateVector(_)) | Err(Error::UndefinedCorrelation(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn run_fold(
    emb: &EmbeddingTable,
    dataset: &JudgmentDataset,
    full_h: &SimilarityMatrix,
    fold: usize,
    opts: &CvOptions,
) -> Result<CvFold> {
    let k = dataset.words.len();
    let word = &dataset.words[fold];
    let train_idx: Vec<usize> = (0..k).filter(|&i| i != fold).collect();
    let train_words: Vec<&str> = train_idx.iter().map(|&i| dataset.words[i].as_str()).collect();
    let h_train = if opts.refit_normalization {
        group_similarity_with(&dataset.restrict_to(&train_words)?, opts.normalization)?
    } else {
        full_h.submatrix(&train_idx)
    };
    let retained = prune(emb, &h_train)?;

    let human: Vec<f64> = train_idx.iter().map(|&j| full_h.values()[[fold, j]]).collect();
    let human = RankTarget::new(&human)?;
    let d = emb.dims();
    let all: Vec<usize> = (0..d).collect();
    let base_rho = test_alignment(emb, fold, &train_idx, &human, &all)?;
    let retained_rho = test_alignment(emb, fold, &train_idx, &human, &retained.indices)?;
    let (random_rho, random_valid_draws) = if opts.random_draws > 0 {
        let mut rng = fold_rng(opts.seed, fold);
        let rb = random_baseline_with(d, retained.len(), opts.random_draws, &mut rng, |s| {
            test_alignment(emb, fold, &train_idx, &human, s)
        })?;
        (rb.mean_rho, rb.valid_draws)
    } else {
        (None, 0)
    };
    Ok(CvFold {
        target: word.clone(),
        base_rho,
        retained_rho,
        random_rho,
        random_valid_draws,
        retained_size: retained.len(),
        train_rho: retained.achieved_rho,
    })
}

/// Leave-one-word-out evaluation of pruning for one (category, group) cell.
///
/// `emb` must contain every word of `dataset`. Test targets are the
/// full-data group similarities of the pairs containing the held-out word.
pub fn prune_cv(emb: &EmbeddingTable, dataset: &JudgmentDataset, opts: &CvOptions) -> Result<PruneCvReport> {
    let k = dataset.words.len();
    if k < 4 {
        let word = dataset.words.first().cloned().unwrap_or_default();
        return Err(Error::FoldSize {
            word,
            pairs: k.saturating_sub(1),
        });
    }
    let emb = emb.select_words(&dataset.words)?;
    let full_h = group_similarity_with(dataset, opts.normalization)?;
    let folds = (0..k)
        .into_par_iter()
        .map(|fold| {
            run_fold(&emb, dataset, &full_h, fold, opts).map_err(|e| Error::Fold {
                word: dataset.words[fold].clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PruneCvReport {
        category_label: dataset.category_label.clone(),
        group_label: dataset.group_label.clone(),
        folds,
    })
}

/// Alignment of an arbitrary feature subset against `h`, recomputed from
/// scratch.
pub fn subset_alignment(emb: &EmbeddingTable, h: &SimilarityMatrix, features: &[usize]) -> Result<f64> {
    let emb = aligned_rows(emb, h)?;
    simkit::spearman(&cosine_upper(&emb, features)?, &h.upper())
}
