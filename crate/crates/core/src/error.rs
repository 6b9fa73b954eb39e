use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("computation failed: {0}")]
    Computation(String),

    /// The matrix logarithm has no real principal branch for this input.
    #[error("principal logarithm undefined: eigenvalue {re:+.6e}{im:+.6e}i lies on the closed negative real axis")]
    BranchCut { re: f64, im: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unstable dynamics (spectral abscissa {0:.6e} >= 0)")]
    Unstable(f64),

    #[error("variance of component {0} is not positive")]
    DegenerateVariance(usize),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
