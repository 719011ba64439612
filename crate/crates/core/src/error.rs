use std::path::PathBuf;

use crate::dataio::Label;

/// Everything that can go wrong inside the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ingestion error at line {line}, column '{column}': {message}")]
    Ingestion {
        line: u64,
        column: String,
        message: String,
    },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("every feature was dropped by the sparsity filter")]
    EmptySchema,

    #[error("every subject was dropped by the sparsity filter")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("feature '{feature}' has no observed values in the training rows")]
    NoObservedValues { feature: String },

    #[error("missing value at row {row}, feature {feature}; preprocess before training")]
    MissingValue { row: usize, feature: usize },

    #[error("class {0} is absent; both classes are required")]
    MissingClass(Label),

    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("bootstrap produced a single-class sample {attempts} times in a row")]
    DegenerateBootstrap { attempts: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("malformed bundle JSON: {0}")]
    BundleParse(#[from] serde_json::Error),

    #[error("bundle format version {found} is not supported (expected {expected})")]
    BundleVersion { found: u64, expected: u64 },

    #[error("bundle dimensions disagree: {0}")]
    BundleDimension(String),

    #[error("unknown classifier tag '{0}'")]
    UnknownClassifier(String),

    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
}

impl Error {
    /// Stable, machine-readable category used by the CLI on stderr.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Ingestion { .. } => "ingestion",
            Error::Schema(_)
            | Error::EmptySchema
            | Error::EmptyDataset
            | Error::DimensionMismatch { .. }
            | Error::NoObservedValues { .. }
            | Error::MissingValue { .. }
            | Error::MissingClass(_) => "data",
            Error::InvalidHyperparameter(_) | Error::InvalidCovariance(_) => "config",
            Error::DegenerateBootstrap { .. } => "training",
            Error::Unsupported(_) => "unsupported",
            Error::BundleParse(_) => "bundle-parse",
            Error::BundleVersion { .. } => "bundle-version",
            Error::BundleDimension(_) => "bundle-dimension",
            Error::UnknownClassifier(_) => "bundle-classifier",
            Error::InvalidBundle(_) => "bundle",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
