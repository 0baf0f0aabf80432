use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (dataset {dataset})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        dataset: usize,
    },

    #[error("report: {0}")]
    Report(String),

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error(transparent)]
    Store(#[from] StoreError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than a
    /// failure during a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Label { .. }
                | Error::Store(StoreError::Line { .. } | StoreError::Manifest { .. })
        )
    }
}

/// Failures reading, writing or validating an embedding store.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic bytes {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u16,
        expected: u16,
    },

    #[error("{path}: record {record}: {what} width {found}, expected {expected}")]
    Width {
        path: PathBuf,
        record: usize,
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{path}: truncated payload in record {record}")]
    Truncated { path: PathBuf, record: usize },

    #[error("{path}: record {record}: {msg}")]
    Record {
        path: PathBuf,
        record: usize,
        msg: String,
    },

    #[error("{path}: line {line}: {msg}")]
    Line { path: PathBuf, line: usize, msg: String },

    #[error("{path}: invalid manifest: {msg}")]
    Manifest { path: PathBuf, msg: String },

    #[error("invalid store: {0}")]
    Invalid(String),
}
