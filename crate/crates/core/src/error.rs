use std::path::PathBuf;

use thiserror::Error;

/// A malformed row in an input CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// 1-based line number in the file (the header is line 1).
    pub line: u64,
    pub message: String,
}

impl std::fmt::Display for RowError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("{path}: header mismatch, expected `{expected}`, found `{found}`")]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{path}: {} malformed row(s): {}", errors.len(), format_rows(errors))]
    MalformedRows { path: PathBuf, errors: Vec<RowError> },

    #[error("duplicate patient_id `{0}`")]
    DuplicatePatient(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("k = {k} exceeds the number of patients ({n})")]
    TooFewPatients { k: usize, n: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("label {label} out of range for {k} clusters")]
    LabelOutOfRange { label: i64, k: usize },

    #[error("index undefined: {0}")]
    UndefinedIndex(String),

    #[error("clusters {a} and {b} have coincident centroids")]
    CoincidentCentroids { a: usize, b: usize },

    #[error("feature-name mismatch: {0}")]
    FeatureMismatch(String),

    #[error("cluster count mismatch: {0} vs {1}")]
    ClusterCountMismatch(usize, usize),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn format_rows(errors: &[RowError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
