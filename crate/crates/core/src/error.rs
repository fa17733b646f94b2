use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite entry in input")]
    NonFinite,

    #[error("matrix is numerically rank deficient at column {column}")]
    RankDeficient { column: usize },

    #[error("vector lies numerically in the span of the basis; no expansion possible")]
    NoExpansion,

    #[error("zero vector where a nonzero vector is required")]
    ZeroVector,

    #[error("matrix is not positive definite: pivot {pivot:e} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error(
        "B^T B is singular (B is rank deficient, pivot {pivot:e} at index {index}); \
         CPF-harmonic methods need B of full column rank, use the IF-harmonic methods (ifh, rifh) instead"
    )]
    RankDeficientB { index: usize, pivot: f64 },

    #[error("matrix pair is not regular: A^T A + B^T B is singular")]
    NotRegular,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
