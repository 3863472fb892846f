use thiserror::Error;

use crate::Vector;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("unsupported: non-square observability map (n = {n}, N*p = {rows})")]
    NonSquareWindow { n: usize, rows: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value while evaluating {0}")]
    NonFinite(String),

    #[error("observer diverged at instant k = {k}, iteration i = {i}: {reason}")]
    Divergence { k: usize, i: usize, reason: String },

    #[error("singular or ill-conditioned Jacobian (condition estimate {condition:e}) at w = {w:?}")]
    SingularJacobian { condition: f64, w: Vec<f64> },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl Error {
    pub(crate) fn dimension(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub(crate) fn singular(condition: f64, w: &Vector) -> Self {
        Error::SingularJacobian {
            condition,
            w: w.iter().copied().collect(),
        }
    }
}
