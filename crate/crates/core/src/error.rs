use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("out-of-vocabulary token `{0}`")]
    OutOfVocabulary(String),

    #[error("no parse for sentence `{0}`")]
    NoParse(String),

    #[error("restricted grammar too large: more than {cap} sentences")]
    GrammarTooLarge { cap: usize },

    #[error("negative population too small: {available} false sentences, {requested} requested")]
    NegativePopulationTooSmall { available: usize, requested: usize },

    #[error("lattice too large: {0}")]
    ComplexityCap(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("degenerate competition set for clip {clip_id}: every sentence scores zero")]
    DegenerateCompetitionSet { clip_id: usize },

    #[error("non-finite score: {0}")]
    NonFinite(String),

    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error("ROC needs both classes: {positives} positives, {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
