use thiserror::Error;

/// Errors raised by model construction, evaluation and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("unknown block `{0}`")]
    UnknownBlock(String),

    #[error("block index {0} out of range")]
    BlockOutOfRange(usize),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("density mode violated: neg-log-ratio {value} < 0 at y = {y}")]
    ModeViolation { y: f64, value: f64 },

    #[error("flat prior has no weight or neg-log-ratio")]
    NonInformative,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("numerical failure in block {block}: {message}")]
    Numerical { block: usize, message: String },

    #[error("proposal too wide: all sample likelihoods are negligible")]
    ProposalTooWide,

    #[error("grid budget exceeded: {nodes} nodes requested, limit {limit}")]
    GridBudget { nodes: f64, limit: f64 },

    #[error("resampling run {index} failed: {source}")]
    Resampling {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
