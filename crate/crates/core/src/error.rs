use std::path::PathBuf;

/// Errors produced anywhere in the pruning and probing pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("words missing from source: {}", .0.join(", "))]
    MissingWords(Vec<String>),

    #[error("unknown word `{0}`")]
    UnknownWord(String),

    #[error("rating {rating} out of range [1, 7] at line {line}")]
    RatingRange { line: usize, rating: f64 },

    #[error("self-pair `{word}` at line {line}")]
    SelfPair { line: usize, word: String },

    #[error("duplicate rating for participant `{participant}` on pair ({word1}, {word2}) at line {line}")]
    DuplicateRating {
        line: usize,
        participant: String,
        word1: String,
        word2: String,
    },

    #[error("mapping error: {0}")]
    Mapping(String),

    #[error("degenerate vector: `{0}` has zero norm on the selected features")]
    DegenerateVector(String),

    #[error("participant `{0}` gave constant ratings; z-scores are undefined")]
    DegenerateParticipant(String),

    #[error("pair ({0}, {1}) has no ratings")]
    UnratedPair(String, String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("word lists of the two similarity matrices differ")]
    AlignmentDomain,

    #[error("pruning failed: {0}")]
    PruningFailure(String),

    #[error("fold for `{word}` has {pairs} test pairs; at least 3 are required")]
    FoldSize { word: String, pairs: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("rank error: requested {requested} components, at most {limit} are available")]
    Rank { requested: usize, limit: usize },

    #[error("predictor column {0} is constant")]
    DegeneratePredictor(usize),

    #[error("shape error: expected width {expected}, got {found}")]
    Shape { expected: usize, found: usize },

    #[error("fold for `{word}` failed: {source}")]
    Fold {
        word: String,
        #[source]
        source: Box<Error>,
    },

    #[error("paired differences for `{0}` have zero variance")]
    DegenerateTest(String),

    #[error("profile `{label}` has an undefined entry at position {index}")]
    UndefinedEntry { label: String, index: usize },

    #[error("configuration invalid:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("stage `{stage}` failed for task `{task}`: {source}")]
    Stage {
        stage: &'static str,
        task: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
