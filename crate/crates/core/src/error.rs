use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for the crate.
///
/// Construction-time validation happens once, so downstream numeric code can
/// assume finite inputs and matching lengths.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: {context} (expected {expected}, found {found})")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "k = 0 gives every group unit weight, and no finite-sample estimator \
         is consistent for that supremum; use k in (0, 1]"
    )]
    UniformWeightingUnestimable,

    #[error("group is empty: {0}")]
    EmptyGroup(&'static str),

    #[error("input too large for the exhaustive oracle: n = {n}, limit {limit}")]
    OracleTooLarge { n: usize, limit: usize },

    #[error("operation requires uniformly weighted samples: {0}")]
    WeightedInputUnsupported(&'static str),

    #[error("dataset has no sensitive keys, required by {0}")]
    MissingSensitiveKeys(&'static str),

    #[error("training diverged at epoch {epoch}: mean training loss = {value}")]
    Diverged { epoch: usize, value: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("csv column {0:?} not found in header")]
    MissingColumn(String),

    #[error("report error: {0}")]
    Report(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("toml parse error: {0}")]
    TomlParse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
