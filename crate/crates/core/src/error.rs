use thiserror::Error;

use crate::sampler::BurnInDiagnostics;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parameter out of range: {0}")]
    OutOfRange(String),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("invalid counts: {0}")]
    InvalidCounts(String),

    #[error("estimate undefined: {0}")]
    Undefined(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("maximum-likelihood point lies on the state boundary")]
    BoundaryMle,

    #[error("degenerate curvature matrix: {0}")]
    Degenerate(String),

    #[error("non-finite log density: {0}")]
    NonFinite(String),

    #[error("slice shrinkage failed after {0} rejections")]
    ShrinkageFailed(usize),

    #[error("chains did not converge after {} burn-in rounds", .0.rounds.len())]
    NotConverged(Box<BurnInDiagnostics>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
