//! Seeded synthetic data with planted structure.
//!
//! Used by the test suites and to build the bundled fixture. Everything here
//! is deterministic given its seed.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::corpus_io::{pair_key, EmbeddingTable, JudgmentDataset, Participant};
use crate::simkit::{cosine_upper, upper_len, SimilarityMatrix};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n × d` table of uniform values in [−1, 1], words `w0, w1, ...`.
pub fn random_embedding(n: usize, d: usize, seed: u64) -> EmbeddingTable {
    let mut r = rng(seed);
    let values = Array2::from_shape_simple_fn((n, d), || r.random_range(-1.0..1.0));
    EmbeddingTable::new((0..n).map(|i| format!("w{i}")).collect(), values).expect("valid shape")
}

/// Human-like matrix whose upper triangle is i.i.d. uniform noise.
pub fn noise_matrix(words: &[String], seed: u64) -> SimilarityMatrix {
    let mut r = rng(seed);
    let upper: Vec<f64> = (0..upper_len(words.len())).map(|_| r.random::<f64>()).collect();
    SimilarityMatrix::from_upper(words.to_vec(), &upper, 0.0).expect("length matches")
}

/// A category whose judgments follow cosine similarity over a planted subset
/// of the embedding features.
#[derive(Debug, Clone)]
pub struct PlantedCategory {
    pub embeddings: EmbeddingTable,
    pub dataset: JudgmentDataset,
    /// Planted feature indices, ascending.
    pub planted: Vec<usize>,
}

/// Generates `k` words over `d` features. Planted features are drawn from
/// [0.2, 1.0] with a random sign, distractors are wider uniform noise. Each of
/// `participants` rates every pair as `round(4 + 3·(cos + noise·ε))` clamped
/// to [1, 7], where `cos` uses only the planted features and `ε ~ N(0, 1)`.
pub fn planted_judgments(
    k: usize,
    d: usize,
    planted: usize,
    participants: usize,
    noise: f64,
    seed: u64,
) -> PlantedCategory {
    planted_judgments_named(
        &(0..k).map(|i| format!("v{i:02}")).collect::<Vec<_>>(),
        d,
        &choose_planted(d, planted, seed),
        participants,
        noise,
        seed,
        "planted",
        "synthetic",
    )
}

/// Picks `planted` of `d` features, ascending.
pub fn choose_planted(d: usize, planted: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed ^ 0x5eed);
    let mut set = rand::seq::index::sample(&mut r, d, planted).into_vec();
    set.sort_unstable();
    set
}

#[allow(clippy::too_many_arguments)]
pub fn planted_judgments_named(
    words: &[String],
    d: usize,
    planted: &[usize],
    participants: usize,
    noise: f64,
    seed: u64,
    category: &str,
    group: &str,
) -> PlantedCategory {
    let k = words.len();
    let mut r = rng(seed);
    let values = Array2::from_shape_fn((k, d), |(_, f)| {
        if planted.contains(&f) {
            let mag: f64 = r.random_range(0.2..1.0);
            if r.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        } else {
            r.random_range(-1.5..1.5)
        }
    });
    let embeddings = EmbeddingTable::new(words.to_vec(), values).expect("valid shape");
    let dataset = judgments_from(&embeddings, planted, participants, noise, &mut r, category, group);
    PlantedCategory {
        embeddings,
        dataset,
        planted: planted.to_vec(),
    }
}

/// Simulated raters for the planted geometry of `emb`.
pub fn judgments_from<R: Rng>(
    emb: &EmbeddingTable,
    planted: &[usize],
    participants: usize,
    noise: f64,
    r: &mut R,
    category: &str,
    group: &str,
) -> JudgmentDataset {
    let k = emb.len();
    let latent = cosine_upper(emb, planted).expect("planted features are non-zero");
    let mut sorted: Vec<String> = emb.vocab().to_vec();
    sorted.sort();
    let sorted_index = |w: &str| sorted.binary_search_by(|x| x.as_str().cmp(w)).unwrap();
    let people = (0..participants)
        .map(|p| {
            let mut ratings = std::collections::BTreeMap::new();
            let mut idx = 0;
            for i in 0..k {
                for j in (i + 1)..k {
                    let eps: f64 = r.sample(StandardNormal);
                    let rating = (4.0 + 3.0 * (latent[idx] + noise * eps)).round().clamp(1.0, 7.0);
                    let key = pair_key(sorted_index(&emb.vocab()[i]), sorted_index(&emb.vocab()[j]));
                    ratings.insert(key, rating);
                    idx += 1;
                }
            }
            Participant {
                id: format!("p{p:02}"),
                ratings,
            }
        })
        .collect();
    JudgmentDataset {
        words: sorted,
        participants: people,
        category_label: category.to_string(),
        group_label: group.to_string(),
    }
}

/// Dimension labels of the bundled fixture's annotation table, grouped by
/// domain (65 dimensions in 14 domains).
pub const FIXTURE_DOMAINS: &[(&str, &[&str])] = &[
    ("Vision", &["Vision", "Bright", "Dark", "Color", "Pattern", "Large", "Small", "Motion", "Biomotion", "Fast", "Slow", "Shape", "Complexity", "Face", "Body"]),
    ("Somatic", &["Touch", "Temperature", "Texture", "Weight", "Pain"]),
    ("Audition", &["Audition", "Loud", "Low", "High", "Sound", "Music", "Speech"]),
    ("Gustation", &["Taste"]),
    ("Olfaction", &["Smell"]),
    ("Motor", &["Head", "UpperLimb", "LowerLimb", "Practice"]),
    ("Spatial", &["Landmark", "Path", "Scene", "Near", "Toward", "Away"]),
    ("Temporal", &["Number", "Time", "Duration", "Long", "Short"]),
    ("Causal", &["Caused", "Consequential"]),
    ("Social", &["Social", "Human", "Communication", "Self"]),
    ("Cognition", &["Cognition"]),
    ("Emotion", &["Benefit", "Harm", "Pleasant", "Unpleasant", "Happy", "Sad", "Angry", "Disgusted", "Fearful", "Surprised"]),
    ("Drive", &["Drive", "Needs"]),
    ("Attention", &["Attention", "Arousal"]),
];

/// Paths written by [`write_fixture`].
#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub config: PathBuf,
    pub embeddings: PathBuf,
    pub annotations: PathBuf,
    pub domain_map: PathBuf,
    pub judgments: Vec<PathBuf>,
}

const FIXTURE_CATEGORIES: &[(&str, [&str; 8])] = &[
    ("light", ["blaze", "flash", "flicker", "gleam", "glint", "glow", "shimmer", "sparkle"]),
    ("motion", ["bounce", "float", "glide", "roll", "skip", "spin", "trot", "twirl"]),
];

const FIXTURE_GROUPS: &[&str] = &["sighted", "blind"];

/// Planted features per (category, group) in the fixture.
fn fixture_planted(category: usize, group: usize) -> Vec<usize> {
    match (category, group) {
        (0, 0) => vec![0, 3, 5, 9],
        (0, 1) => vec![0, 3, 6, 9],
        (1, 0) => vec![2, 7, 11, 13],
        _ => vec![1, 8, 12, 15],
    }
}

/// Writes the bundled synthetic fixture into `dir`: 2 groups × 2 categories
/// × 8 words, 16-feature embeddings, 40 annotated words over 65 dimensions
/// in 14 domains, and a run configuration `config.toml` whose output
/// directory is `out` relative to the working directory of the run.
pub fn write_fixture(dir: &Path, seed: u64) -> std::io::Result<FixturePaths> {
    const D: usize = 16;
    const N_ANNOTATED: usize = 40;
    fs::create_dir_all(dir)?;
    let mut r = rng(seed);

    // Category words share one embedding; each group rates from its own
    // planted view of it.
    let verbs: Vec<String> = FIXTURE_CATEGORIES
        .iter()
        .flat_map(|(_, ws)| ws.iter().map(|w| w.to_string()))
        .collect();
    let nouns: Vec<String> = (0..N_ANNOTATED).map(|i| format!("item{i:02}")).collect();
    let vocab: Vec<String> = verbs.iter().chain(&nouns).cloned().collect();
    let values = Array2::from_shape_fn((vocab.len(), D), |_| {
        let mag: f64 = r.random_range(0.2..1.5);
        if r.random_bool(0.5) {
            mag
        } else {
            -mag
        }
    });
    let emb = EmbeddingTable::new(vocab, values).expect("valid shape");
    let embeddings = dir.join("embeddings.txt");
    emb.write(fs::File::create(&embeddings)?)?;

    let mut judgments = Vec::new();
    for (c, (category, words)) in FIXTURE_CATEGORIES.iter().enumerate() {
        let sub = emb.select_words(words).expect("fixture words present");
        for (g, group) in FIXTURE_GROUPS.iter().enumerate() {
            let ds = judgments_from(&sub, &fixture_planted(c, g), 6, 0.15, &mut r, category, group);
            let path = dir.join(format!("judgments_{group}_{category}.csv"));
            let mut out = fs::File::create(&path)?;
            writeln!(out, "participant,word1,word2,rating")?;
            for p in &ds.participants {
                for (&(i, j), rating) in &p.ratings {
                    writeln!(out, "{},{},{},{}", p.id, ds.words[i], ds.words[j], rating)?;
                }
            }
            judgments.push(path);
        }
    }

    // Annotations: a non-negative, noisy linear read-out of the embedding.
    let dims: Vec<&str> = FIXTURE_DOMAINS.iter().flat_map(|(_, ds)| ds.iter().copied()).collect();
    let weights = Array2::from_shape_simple_fn((D, dims.len()), || r.random_range(-1.0..1.0));
    let annotations = dir.join("annotations.csv");
    let mut out = fs::File::create(&annotations)?;
    writeln!(out, "word,{}", dims.join(","))?;
    for w in &nouns {
        let x = emb.row(w).expect("noun present");
        let cells: Vec<String> = (0..dims.len())
            .map(|j| {
                let eps: f64 = r.sample(StandardNormal);
                let v = (2.5 + 0.8 * x.dot(&weights.column(j)) + 0.3 * eps).clamp(0.0, 6.0);
                format!("{:.3}", v)
            })
            .collect();
        writeln!(out, "{w},{}", cells.join(","))?;
    }
    let domain_map = dir.join("domain_map.csv");
    let mut out = fs::File::create(&domain_map)?;
    writeln!(out, "dimension,domain")?;
    for (domain, members) in FIXTURE_DOMAINS {
        for m in *members {
            writeln!(out, "{m},{domain}")?;
        }
    }

    let config = dir.join("config.toml");
    let mut out = fs::File::create(&config)?;
    let mut text = format!(
        "seed = {seed}\njobs = 2\noutput_dir = \"out\"\n\n[inputs]\nembeddings = \"embeddings.txt\"\nannotations = \"annotations.csv\"\ndomain_map = \"domain_map.csv\"\n"
    );
    for (category, _) in FIXTURE_CATEGORIES {
        for group in FIXTURE_GROUPS {
            text.push_str(&format!(
                "\n[[judgments]]\ngroup = \"{group}\"\ncategory = \"{category}\"\npath = \"judgments_{group}_{category}.csv\"\n"
            ));
        }
    }
    for (category, _) in FIXTURE_CATEGORIES {
        for group in FIXTURE_GROUPS {
            text.push_str(&format!("\n[[tasks]]\ngroup = \"{group}\"\ncategory = \"{category}\"\n"));
        }
    }
    text.push_str(
        "\n[pruning]\ncv = true\nrandom_draws = 20\nrefit_normalization = true\n\n[plsr]\nscale = true\n\n[stats]\nalpha = 0.05\ngroup_a = \"sighted\"\n",
    );
    out.write_all(text.as_bytes())?;

    Ok(FixturePaths {
        config,
        embeddings,
        annotations,
        domain_map,
        judgments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_domains_shape() {
        assert_eq!(FIXTURE_DOMAINS.len(), 14);
        let n: usize = FIXTURE_DOMAINS.iter().map(|(_, m)| m.len()).sum();
        assert_eq!(n, 65);
    }

    #[test]
    fn planted_is_deterministic() {
        let a = planted_judgments(6, 10, 3, 4, 0.2, 9);
        let b = planted_judgments(6, 10, 3, 4, 0.2, 9);
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.planted.len(), 3);
        assert_eq!(a.dataset.n_ratings(), 4 * 15);
    }
}
