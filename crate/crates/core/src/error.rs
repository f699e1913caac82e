use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("singular matrix: pivot {pivot:e} at column {column}")]
    SingularMatrix { column: usize, pivot: f64 },

    #[error("power iteration did not converge after {iterations} iterations (relative change {change:e})")]
    NonConvergence { iterations: usize, change: f64 },

    #[error("input outside the normalized domain: {0}")]
    Domain(String),

    #[error("backward pass requested without a forward cache")]
    MissingCache,

    #[error("learned inter-layer requested but no translator tap was supplied")]
    MissingTap,

    #[error("K = {k} exceeds the training-set size {available}")]
    KTooLarge { k: usize, available: usize },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("subject {0} has no target network")]
    MissingTarget(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("class {label} has {count} subjects, need at least {needed} for stratified folds")]
    InsufficientClassCount { label: i8, count: usize, needed: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path} is not symmetric: |M(i,j) - M(j,i)| = {gap:e} at ({i},{j})")]
    Asymmetry {
        path: PathBuf,
        i: usize,
        j: usize,
        gap: f64,
    },

    #[error("{path} is not square: {rows} rows, row {row} has {cols} columns")]
    NonSquare {
        path: PathBuf,
        rows: usize,
        row: usize,
        cols: usize,
    },

    #[error("duplicate subject id {0}")]
    DuplicateId(String),

    #[error("malformed checkpoint: {0}")]
    Format(String),

    #[error("checkpoint checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
