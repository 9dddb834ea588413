use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("ontology parent relation contains a cycle through `{0}`")]
    Cycle(String),
    #[error("ontology node `{0}` has no path to the root")]
    Orphan(String),
    #[error("unknown drug `{0}`")]
    UnknownDrug(String),
    #[error("unknown code `{0}`")]
    UnknownCode(String),
    #[error("invalid asset: {0}")]
    InvalidAsset(String),
    #[error("drug `{0}` has no first-prescription year")]
    MissingYear(String),
    #[error("drug `{drug}` needs {needed} positive records, found {found}")]
    InsufficientPositives {
        drug: String,
        needed: usize,
        found: usize,
    },
    #[error("drug `{drug}` needs {needed} negative records, found {found}")]
    InsufficientNegatives {
        drug: String,
        needed: usize,
        found: usize,
    },
    #[error("record `{0}` has no codes")]
    EmptyRecord(String),
    #[error("support set is empty")]
    EmptySupport,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("non-finite loss for episode {fingerprint}")]
    NonFiniteLoss { fingerprint: String },
    #[error("metric needs at least one positive and one negative label")]
    DegenerateLabels,
    #[error("k = {k} exceeds the {n} scored records")]
    KTooLarge { k: usize, n: usize },
    #[error("aggregation needs at least 2 episodes, got {0}")]
    InsufficientEpisodes(usize),
    #[error("invalid generator spec: {0}")]
    Spec(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    /// Whether the error stems from bad input (configuration, assets, spec)
    /// rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::NonFinite(_) | Error::NonFiniteLoss { .. } | Error::Checkpoint(_)
        )
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
