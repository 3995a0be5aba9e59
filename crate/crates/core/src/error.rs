use thiserror::Error;

use crate::solver::SolveResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-differentiable point in {0}")]
    NonDifferentiable(String),

    #[error("solver diverged: {0}")]
    Diverged(String),

    #[error("hard constraints infeasible: violation {violation:.3e} at penalty cap")]
    InfeasibleHardConstraints {
        violation: f64,
        partial: Box<SolveResult>,
    },

    #[error("backward sweep failed: stage {stage} block not positive definite after regularization")]
    Regularization { stage: usize },

    #[error("non-finite plant state at t = {0}")]
    NonFiniteState(f64),

    #[error("rank-deficient regression: rank {rank} with {points} points")]
    RankDeficient { rank: usize, points: usize },

    #[error("non-finite measurement {0:?}")]
    NonFiniteMeasurement([f64; 3]),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("unknown experiment {0:?}")]
    UnknownExperiment(String),

    #[error("invalid override {key:?}: {reason}")]
    InvalidOverride { key: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(what: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            got,
        }
    }
}
