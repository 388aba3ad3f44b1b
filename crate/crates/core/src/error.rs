//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("parse error at row {row}, column {col}: {detail}")]
    ParseError {
        row: usize,
        col: String,
        detail: String,
    },
    #[error("dataset too small: {0}")]
    EmptyDataset(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("no policy block matches row {0}")]
    NoBlockMatches(usize),
    #[error("multiple policy blocks match row {0}")]
    MultipleBlocksMatch(usize),
    #[error("unknown policy name: {0}")]
    UnknownPolicyName(String),
    #[error("policy layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("too few rows: {0}")]
    TooFewRows(String),
    #[error("singular design matrix: {0}")]
    SingularDesign(String),
    #[error("bootstrap unstable: {0}")]
    BootstrapUnstable(String),
    #[error("covariate source too narrow: {0}")]
    SourceTooNarrow(String),
    #[error("true mean function unavailable: {0}")]
    TruthUnavailable(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by bad user input (files, schemas, configs)
    /// as opposed to numerical failures mid-computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::FileNotFound(_)
                | Error::SchemaMismatch(_)
                | Error::ParseError { .. }
                | Error::EmptyDataset(_)
                | Error::UnknownPolicyName(_)
                | Error::LayoutMismatch(_)
                | Error::InvalidConfig(_)
                | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
