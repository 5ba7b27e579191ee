use thiserror::Error;

use crate::geometry::ManifoldKind;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("manifold mismatch: expected {expected:?}, found {found:?}")]
    ManifoldMismatch {
        expected: ManifoldKind,
        found: ManifoldKind,
    },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("invalid isometry: {0}")]
    InvalidIsometry(String),
    #[error("parameter out of domain: {0}")]
    Domain(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("degenerate mean: resultant norm {0:e} vanishes")]
    DegenerateMean(f64),
    #[error("weights sum to zero")]
    ZeroWeight,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("numerical degeneracy at t = {t}: {reason}")]
    Degenerate { t: usize, reason: String },
    #[error("EM iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("enumeration of {configurations} configurations exceeds the guard of {limit}; use a smaller instance")]
    EnumerationGuard { configurations: f64, limit: f64 },
    #[error("no convergence after {iterations} iterations (gradient norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Degenerate { .. }
            | Error::DegenerateMean(_)
            | Error::NotConverged { .. }
            | Error::ZeroWeight => true,
            Error::AtIteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
