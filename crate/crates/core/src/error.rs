use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the command-line runner to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Pipeline,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },

    #[error("unsupported encoding in {path}: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },

    #[error("{path} contains no audio samples")]
    EmptyAudio { path: PathBuf },

    #[error("signal has {samples} samples, shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("feature sequence is empty")]
    EmptyFeatures,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("manifest {path}:\n{}", format_issues(.issues))]
    Manifest {
        path: PathBuf,
        issues: Vec<ManifestIssue>,
    },

    #[error("class {label:?} has a single item; rank metrics are undefined")]
    SingletonClass { label: String },

    #[error("invalid distance matrix: {0}")]
    InvalidMatrix(String),

    #[error("item sets differ: {0}")]
    MismatchedItems(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("{stage} failed for item {item}: {source}")]
    Stage {
        stage: &'static str,
        item: String,
        #[source]
        source: Box<Error>,
    },
}

/// One validation problem found while loading a manifest. `row` is the
/// 1-based line number in the CSV file (the header is line 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestIssue {
    pub row: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ManifestIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.row {
            Some(row) => write!(f, "line {row}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

fn format_issues(issues: &[ManifestIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str, item: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            item: item.into(),
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::Io { .. }
            | Error::Unreadable { .. }
            | Error::UnsupportedEncoding { .. }
            | Error::EmptyAudio { .. }
            | Error::Manifest { .. }
            | Error::SingletonClass { .. }
            | Error::Format { .. }
            | Error::MismatchedItems(_) => ErrorKind::Data,
            Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Pipeline,
        }
    }
}
