use thiserror::Error;

/// Errors raised by the simulator, the protocols and the loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("non-finite state in layer {layer} at t = {time}")]
    NonFinite { time: f64, layer: usize },

    #[error("value {value} is not realizable; admissible range is {range}")]
    Unrealizable { value: f64, range: String },

    #[error("gain condition violated: alpha * T = {product} exceeds {bound} for layer {layer}")]
    GainCondition {
        product: f64,
        bound: f64,
        layer: usize,
    },

    #[error("writing memristor ({row}, {col}) of layer {layer} did not converge after {iterations} iterations (error {error})")]
    Convergence {
        layer: usize,
        row: usize,
        col: usize,
        iterations: usize,
        error: f64,
    },

    #[error("trace holds no sample at t = {0}")]
    MissingSample(f64),

    #[error("measured divisor {0:e} is too small; activation or device assumptions are violated")]
    DivisorTooSmall(f64),

    #[error("IDX format error: {0}")]
    Idx(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            got,
        }
    }
}
