//! Readers and writers for the input corpora: text-format word vectors,
//! pairwise similarity judgments, semantic annotations and the
//! dimension → domain map.
//!
//! All tokens are lowercased on ingestion. Parsed tables are immutable.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Read, Write};

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::numfmt;

/// Lowest admissible similarity rating.
pub const RATING_MIN: f64 = 1.0;
/// Highest admissible similarity rating.
pub const RATING_MAX: f64 = 7.0;

fn normalize_token(token: &str) -> String {
    token.trim().to_lowercase()
}

/// A vocabulary-indexed matrix of word vectors, one row per word.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    values: Array2<f64>,
}

impl EmbeddingTable {
    /// Builds a table, checking uniqueness of tokens, shape and finiteness.
    pub fn new(vocab: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if vocab.len() != values.nrows() {
            return Err(Error::LengthMismatch {
                left: vocab.len(),
                right: values.nrows(),
            });
        }
        if vocab.len() < 2 {
            return Err(Error::Domain(format!(
                "an embedding table needs at least 2 words, got {}",
                vocab.len()
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::Domain("an embedding table needs at least 1 feature".into()));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, w) in vocab.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Format {
                    line: i + 1,
                    message: format!("duplicate token `{w}`"),
                });
            }
        }
        if let Some(((r, _), _)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Format {
                line: r + 1,
                message: format!("non-finite value for `{}`", vocab[r]),
            });
        }
        Ok(Self { vocab, index, values })
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    /// Number of features `d`.
    pub fn dims(&self) -> usize {
        self.values.ncols()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn index_of(&self, word: &str) -> Result<usize> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| Error::UnknownWord(word.to_string()))
    }

    pub fn row(&self, word: &str) -> Result<ArrayView1<'_, f64>> {
        Ok(self.values.row(self.index_of(word)?))
    }

    /// Returns a table holding exactly `words`, in that order.
    ///
    /// Every absent word is reported in one [`Error::MissingWords`].
    pub fn select_words<S: AsRef<str>>(&self, words: &[S]) -> Result<EmbeddingTable> {
        let missing: Vec<String> = words
            .iter()
            .map(|w| w.as_ref())
            .filter(|w| !self.index.contains_key(*w))
            .map(str::to_string)
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingWords(missing));
        }
        let rows: Vec<usize> = words.iter().map(|w| self.index[w.as_ref()]).collect();
        let values = self.values.select(ndarray::Axis(0), &rows);
        EmbeddingTable::new(words.iter().map(|w| w.as_ref().to_string()).collect(), values)
    }

    /// Writes the table in the whitespace-separated text format with six
    /// significant digits per value.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut line = String::new();
        for (word, row) in self.vocab.iter().zip(self.values.rows()) {
            line.clear();
            line.push_str(word);
            for v in row {
                line.push(' ');
                line.push_str(&numfmt::sig(*v, numfmt::EMBEDDING_SIG_DIGITS));
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

/// Parses the `token v1 ... vd` text format.
///
/// When `vocab_filter` is given only those tokens are kept, in file order, and
/// any filter word not found in the stream is an error. Width consistency is
/// checked on every line; numbers are parsed only for kept lines.
pub fn parse_embeddings<R: BufRead>(
    source: R,
    vocab_filter: Option<&BTreeSet<String>>,
) -> Result<EmbeddingTable> {
    let mut vocab = Vec::new();
    let mut data = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut width: Option<usize> = None;

    for (lineno, line) in source.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = normalize_token(fields.next().expect("non-empty line has a field"));
        let rest: Vec<&str> = fields.collect();
        match width {
            None => {
                if rest.is_empty() {
                    return Err(Error::Format {
                        line: lineno,
                        message: format!("`{token}` has no values"),
                    });
                }
                width = Some(rest.len());
            }
            Some(d) if d != rest.len() => {
                return Err(Error::Format {
                    line: lineno,
                    message: format!("expected {d} values, found {}", rest.len()),
                });
            }
            Some(_) => {}
        }
        if let Some(first) = seen.insert(token.clone(), lineno) {
            return Err(Error::Format {
                line: lineno,
                message: format!("duplicate token `{token}` (first seen at line {first})"),
            });
        }
        if vocab_filter.is_some_and(|f| !f.contains(&token)) {
            continue;
        }
        for field in rest {
            let v: f64 = field.parse().map_err(|_| Error::Format {
                line: lineno,
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Format {
                    line: lineno,
                    message: format!("non-finite value `{field}`"),
                });
            }
            data.push(v);
        }
        vocab.push(token);
    }

    if let Some(filter) = vocab_filter {
        let missing: Vec<String> = filter
            .iter()
            .filter(|w| !seen.contains_key(*w))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingWords(missing));
        }
    }
    let d = width.unwrap_or(0);
    let values = Array2::from_shape_vec((vocab.len(), d), data)
        .map_err(|e| Error::Domain(e.to_string()))?;
    EmbeddingTable::new(vocab, values)
}

/// One participant's ratings, keyed by `(i, j)` word indices with `i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Participant {
    pub id: String,
    pub ratings: BTreeMap<(usize, usize), f64>,
}

/// Pairwise similarity ratings for the members of one category, as given by
/// one group of participants.
///
/// `words` is sorted and `participants` are sorted by id, so the dataset does
/// not depend on the row order of its source.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgmentDataset {
    pub words: Vec<String>,
    pub participants: Vec<Participant>,
    pub category_label: String,
    pub group_label: String,
}

/// Canonical key for an unordered pair of distinct indices.
pub fn pair_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl JudgmentDataset {
    pub fn word_index(&self, word: &str) -> Result<usize> {
        self.words
            .binary_search_by(|w| w.as_str().cmp(word))
            .map_err(|_| Error::UnknownWord(word.to_string()))
    }

    /// Number of stored (participant, pair) ratings.
    pub fn n_ratings(&self) -> usize {
        self.participants.iter().map(|p| p.ratings.len()).sum()
    }

    /// Participants whose ratings have fewer than two distinct values.
    pub fn degenerate_participants(&self) -> Vec<String> {
        self.participants
            .iter()
            .filter(|p| {
                let mut it = p.ratings.values();
                match it.next() {
                    None => true,
                    Some(first) => it.all(|v| v == first),
                }
            })
            .map(|p| p.id.clone())
            .collect()
    }

    /// Drops the named participants.
    pub fn without_participants(&self, ids: &[String]) -> JudgmentDataset {
        JudgmentDataset {
            words: self.words.clone(),
            participants: self
                .participants
                .iter()
                .filter(|p| !ids.contains(&p.id))
                .cloned()
                .collect(),
            category_label: self.category_label.clone(),
            group_label: self.group_label.clone(),
        }
    }

    /// Restricts the dataset to a subset of its words, keeping only pairs
    /// whose members both survive. Participants left without ratings are
    /// dropped.
    pub fn restrict_to<S: AsRef<str>>(&self, keep: &[S]) -> Result<JudgmentDataset> {
        let mut kept: Vec<String> = keep.iter().map(|w| w.as_ref().to_string()).collect();
        kept.sort();
        kept.dedup();
        let old_of_new: Vec<usize> = kept
            .iter()
            .map(|w| self.word_index(w))
            .collect::<Result<_>>()?;
        let mut new_of_old = vec![None; self.words.len()];
        for (new, &old) in old_of_new.iter().enumerate() {
            new_of_old[old] = Some(new);
        }
        let participants = self
            .participants
            .iter()
            .filter_map(|p| {
                let ratings: BTreeMap<_, _> = p
                    .ratings
                    .iter()
                    .filter_map(|(&(i, j), &r)| match (new_of_old[i], new_of_old[j]) {
                        (Some(a), Some(b)) => Some((pair_key(a, b), r)),
                        _ => None,
                    })
                    .collect();
                (!ratings.is_empty()).then(|| Participant {
                    id: p.id.clone(),
                    ratings,
                })
            })
            .collect();
        Ok(JudgmentDataset {
            words: kept,
            participants,
            category_label: self.category_label.clone(),
            group_label: self.group_label.clone(),
        })
    }
}

fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(source)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format {
            line,
            message: format!("{other:?}"),
        },
    }
}

fn header_column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::Format {
            line: 1,
            message: format!("missing header column `{name}`"),
        })
}

/// Parses a `participant,word1,word2,rating` table into a dataset for one
/// (category, group) cell. Extra columns are ignored.
pub fn parse_judgments<R: Read>(
    source: R,
    category_label: &str,
    group_label: &str,
) -> Result<JudgmentDataset> {
    let mut reader = csv_reader(source);
    let headers = reader.headers().map_err(csv_error)?.clone();
    let c_part = header_column(&headers, "participant")?;
    let c_w1 = header_column(&headers, "word1")?;
    let c_w2 = header_column(&headers, "word2")?;
    let c_rating = header_column(&headers, "rating")?;

    struct Row {
        line: usize,
        participant: String,
        w1: String,
        w2: String,
        rating: f64,
    }
    let mut rows = Vec::new();
    let mut words = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |c: usize| {
            record.get(c).ok_or_else(|| Error::Format {
                line,
                message: format!("missing column {}", c + 1),
            })
        };
        let participant = field(c_part)?.to_string();
        let w1 = normalize_token(field(c_w1)?);
        let w2 = normalize_token(field(c_w2)?);
        let raw = field(c_rating)?;
        let rating: f64 = raw.parse().map_err(|_| Error::Format {
            line,
            message: format!("rating `{raw}` is not a number"),
        })?;
        if !(RATING_MIN..=RATING_MAX).contains(&rating) {
            return Err(Error::RatingRange { line, rating });
        }
        if w1 == w2 {
            return Err(Error::SelfPair { line, word: w1 });
        }
        words.insert(w1.clone());
        words.insert(w2.clone());
        rows.push(Row {
            line,
            participant,
            w1,
            w2,
            rating,
        });
    }

    let words: Vec<String> = words.into_iter().collect();
    let idx = |w: &str| words.binary_search_by(|x| x.as_str().cmp(w)).unwrap();
    let mut by_participant: BTreeMap<String, BTreeMap<(usize, usize), f64>> = BTreeMap::new();
    for row in rows {
        let key = pair_key(idx(&row.w1), idx(&row.w2));
        let ratings = by_participant.entry(row.participant.clone()).or_default();
        if ratings.insert(key, row.rating).is_some() {
            return Err(Error::DuplicateRating {
                line: row.line,
                participant: row.participant,
                word1: row.w1,
                word2: row.w2,
            });
        }
    }
    Ok(JudgmentDataset {
        words,
        participants: by_participant
            .into_iter()
            .map(|(id, ratings)| Participant { id, ratings })
            .collect(),
        category_label: category_label.to_string(),
        group_label: group_label.to_string(),
    })
}

/// Assignment of annotation dimensions to broader domains.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainMap {
    /// Domain labels in order of first appearance.
    pub domains: Vec<String>,
    /// `dimension label → domain index`.
    pub assignment: BTreeMap<String, usize>,
}

impl DomainMap {
    pub fn domain_of(&self, dim: &str) -> Option<usize> {
        self.assignment.get(dim).copied()
    }
}

/// Parses a `dimension,domain` table.
pub fn parse_domain_map<R: Read>(source: R) -> Result<DomainMap> {
    let mut reader = csv_reader(source);
    let headers = reader.headers().map_err(csv_error)?.clone();
    let c_dim = header_column(&headers, "dimension")?;
    let c_dom = header_column(&headers, "domain")?;
    let mut domains: Vec<String> = Vec::new();
    let mut assignment = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let (Some(dim), Some(dom)) = (record.get(c_dim), record.get(c_dom)) else {
            return Err(Error::Mapping(format!("short row {:?}", record.position())));
        };
        if dim.is_empty() || dom.is_empty() {
            return Err(Error::Mapping(format!("empty cell in map row `{dim},{dom}`")));
        }
        let d = match domains.iter().position(|x| x == dom) {
            Some(d) => d,
            None => {
                domains.push(dom.to_string());
                domains.len() - 1
            }
        };
        if assignment.insert(dim.to_string(), d).is_some() {
            return Err(Error::Mapping(format!("dimension `{dim}` mapped more than once")));
        }
    }
    Ok(DomainMap {
        domains,
        assignment,
    })
}

/// Words × semantic dimensions, with each dimension bound to a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationTable {
    pub words: Vec<String>,
    pub dim_names: Vec<String>,
    pub values: Array2<f64>,
    pub domains: Vec<String>,
    /// Domain index of each dimension.
    pub dim_domain: Vec<usize>,
    /// Words dropped as later duplicates.
    pub dropped_duplicates: Vec<String>,
}

impl AnnotationTable {
    /// Binds `map` to the given dimensions, checking that every dimension is
    /// mapped and every domain keeps at least one dimension.
    pub fn bind(
        words: Vec<String>,
        dim_names: Vec<String>,
        values: Array2<f64>,
        map: &DomainMap,
    ) -> Result<Self> {
        let mut dim_domain = Vec::with_capacity(dim_names.len());
        let mut orphans = Vec::new();
        for dim in &dim_names {
            match map.domain_of(dim) {
                Some(d) => dim_domain.push(d),
                None => orphans.push(dim.clone()),
            }
        }
        if !orphans.is_empty() {
            return Err(Error::Mapping(format!(
                "dimensions without a domain: {}",
                orphans.join(", ")
            )));
        }
        let empty: Vec<&str> = map
            .domains
            .iter()
            .enumerate()
            .filter(|(d, _)| !dim_domain.contains(d))
            .map(|(_, name)| name.as_str())
            .collect();
        if !empty.is_empty() {
            return Err(Error::Mapping(format!(
                "domains with zero dimensions: {}",
                empty.join(", ")
            )));
        }
        Ok(Self {
            words,
            dim_names,
            values,
            domains: map.domains.clone(),
            dim_domain,
            dropped_duplicates: Vec::new(),
        })
    }

    pub fn n_dims(&self) -> usize {
        self.dim_names.len()
    }

    /// Dimension indices belonging to domain `d`.
    pub fn domain_members(&self, d: usize) -> Vec<usize> {
        (0..self.dim_domain.len())
            .filter(|&i| self.dim_domain[i] == d)
            .collect()
    }
}

/// Parses a `word,<dims...>` annotation table and binds it to a domain map.
///
/// Repeated words keep their first row; later rows are dropped with a
/// warning.
pub fn parse_annotations<R: Read, M: Read>(source: R, domain_map_source: M) -> Result<AnnotationTable> {
    let map = parse_domain_map(domain_map_source)?;
    let mut reader = csv_reader(source);
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.len() < 2 || !headers[0].eq_ignore_ascii_case("word") {
        return Err(Error::Format {
            line: 1,
            message: "header must be `word,<dimension labels>`".into(),
        });
    }
    let dim_names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let width = dim_names.len();

    let mut words = Vec::new();
    let mut seen = BTreeSet::new();
    let mut dropped = Vec::new();
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != width + 1 {
            return Err(Error::Format {
                line,
                message: format!("expected {} cells, found {}", width + 1, record.len()),
            });
        }
        let word = normalize_token(&record[0]);
        if !seen.insert(word.clone()) {
            log::warn!("annotation word `{word}` repeated at line {line}; keeping the first row");
            dropped.push(word);
            continue;
        }
        for cell in record.iter().skip(1) {
            let v: f64 = cell.parse().map_err(|_| Error::Format {
                line,
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Format {
                    line,
                    message: format!("annotation value `{cell}` must be finite and non-negative"),
                });
            }
            data.push(v);
        }
        words.push(word);
    }
    let values = Array2::from_shape_vec((words.len(), width), data)
        .map_err(|e| Error::Domain(e.to_string()))?;
    let mut table = AnnotationTable::bind(words, dim_names, values, &map)?;
    table.dropped_duplicates = dropped;
    Ok(table)
}
