use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scene `{0}` has no propagation paths")]
    NoPaths(String),

    #[error("channel vector is all zero")]
    ZeroChannel,

    #[error("source {source_index} holds {available} samples but {required} are required")]
    InsufficientSamples { source_index: usize, available: usize, required: usize },

    #[error("antenna count mismatch: expected {expected}, found {found}")]
    AntennaMismatch { expected: usize, found: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("input length {found} does not match network input width {expected}")]
    InputLength { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("degenerate beamformer: all-zero network output")]
    DegenerateBeamformer,

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("sample {sample}: network rate {rate} exceeds the MRT oracle {oracle}")]
    OracleExceeded { sample: usize, rate: f64, oracle: f64 },

    #[error("non-finite Hessian entry for sample {sample_index}")]
    NonFiniteHessian { sample_index: usize },

    #[error("singular mixture Hessian (smallest |eigenvalue| {smallest_eigenvalue:e})")]
    SingularMixture { smallest_eigenvalue: f64 },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("non-positive denominator {value:e} in dimension {dimension}")]
    NonPositiveDenominator { dimension: usize, value: f64 },

    #[error("extra loss at index {index} is {value}, log undefined")]
    NonPositiveExtraLoss { index: usize, value: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
