use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("metric is not symmetric positive-definite at q = {q:?}")]
    MetricDegeneracy { q: Vec<f64> },

    #[error("constraint degeneracy: ∂φ/∂q̇ has rank {rank}, expected {expected}")]
    ConstraintDegeneracy { rank: usize, expected: usize },

    #[error("transversality violated (condition estimate {condition:e}): {reason}")]
    TransversalityViolation { condition: f64, reason: String },

    #[error(
        "velocity projection did not converge in {iterations} iterations (residual {residual:e})"
    )]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("integration produced a non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("trajectories are sampled on different time grids")]
    GridMismatch,

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("{0}")]
    Io(String),
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}
