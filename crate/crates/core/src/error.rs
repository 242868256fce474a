use thiserror::Error;

/// Errors raised by the geometry, flow, lifting and transport routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:e} below floor {floor:e})")]
    NotSpd { min_eigenvalue: f64, floor: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("geodesic step leaves the SPD cone (margin {margin:e})")]
    InfeasibleStep { margin: f64 },

    #[error("step safeguard exhausted at iteration {tau} for particle {particle} after {retries} retries")]
    SafeguardExhausted {
        tau: usize,
        particle: usize,
        retries: usize,
    },

    #[error("empty measure or dataset: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("embedding dimension {n} exceeds feature dimension {m}")]
    EmbeddingTooLarge { n: usize, m: usize },

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("infeasible marginals: {0}")]
    InfeasibleMarginals(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
