use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),

    #[error("invalid frequency band: {0}")]
    InvalidBand(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no spectral knee: all inspected eigenvalues are equal")]
    NoSpectralKnee,

    #[error("insufficient spectral content: {found} phases for {wanted} clusters")]
    InsufficientSpectralContent { found: usize, wanted: usize },

    #[error("undefined estimate: {0}")]
    UndefinedEstimate(String),

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("singular normal equations (condition number {condition:.3e})")]
    SingularNormalEquations { condition: f64 },

    #[error("eigen decomposition failed to converge: {0}")]
    Decomposition(String),

    #[error("rejection sampling exceeded {0} retries")]
    RetryCapExceeded(usize),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
