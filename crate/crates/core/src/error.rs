use std::path::PathBuf;

use thiserror::Error;

/// One rejected record in a dataset file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    /// 1-based line number (openNRE) or 0-based record index (TACRED array).
    pub line: usize,
    pub reason: String,
}

impl std::fmt::Display for RecordError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

fn join_records(errors: &[RecordError]) -> String {
    const SHOWN: usize = 20;
    let mut out: Vec<String> = errors.iter().take(SHOWN).map(|e| e.to_string()).collect();
    if errors.len() > SHOWN {
        out.push(format!("... and {} more", errors.len() - SHOWN));
    }
    out.join("; ")
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{} malformed record(s) in {path}: {}", .errors.len(), join_records(.errors))]
    Malformed { path: PathBuf, errors: Vec<RecordError> },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("label `{0}` is not in the label space")]
    UnknownLabel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("entity pool for type `{0}` is empty")]
    EmptyPool(String),

    #[error("oracle lacks capability `{0}`")]
    CapabilityMissing(&'static str),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("label space mismatch: {0}")]
    LabelSpaceMismatch(String),

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("cannot select top {k}: only {available} eligible positions")]
    TopKTooLarge { k: usize, available: usize },

    #[error("position {0} lies inside an entity span")]
    ProtectedPosition(usize),

    #[error("missing report `{0}`")]
    MissingReport(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Transport failures may succeed on retry; everything else is final.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
