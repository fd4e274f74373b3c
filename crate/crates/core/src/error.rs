//! Error type shared by every module of the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("zero variance at grid point {0}")]
    ZeroVariance(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite evaluation")]
    NonFiniteEvaluation,

    #[error("unrecognized container")]
    UnrecognizedContainer,

    #[error("truncated payload")]
    TruncatedPayload,

    #[error("standardization flag mismatch: {0}")]
    FlagMismatch(String),

    #[error("wrong mechanism: expected {expected}, got {actual}")]
    WrongMechanism { expected: String, actual: String },

    #[error("climatology mismatch: {0}")]
    ClimatologyMismatch(String),

    #[error("degenerate perfect forecast (RMSE is zero at grid point {0})")]
    DegeneratePerfectForecast(usize),

    #[error("zero reference score at index {0}")]
    ZeroReference(usize),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn shape_mismatch(expected: &[usize], actual: &[usize]) -> Error {
    Error::ShapeMismatch {
        expected: expected.to_vec(),
        actual: actual.to_vec(),
    }
}
