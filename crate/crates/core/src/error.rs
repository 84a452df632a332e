use thiserror::Error;

/// Errors raised across the library.
///
/// Variants are grouped by the CLI exit code they map to: validation (2),
/// infeasibility (3) and numerical failure (4).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LeakError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("scheme violation: {0}")]
    Violation(String),

    #[error("scheme places mass {mass} on infinite-cost cell ({row},{col})")]
    InfiniteCost { row: usize, col: usize, mass: f64 },

    #[error("empty support: every input probability is zero")]
    EmptySupport,

    #[error("cost matrix is not staircase nondecreasing")]
    NotStaircase,

    #[error("infeasible: {reason}")]
    Infeasible { reason: String, minimum: Option<f64> },

    #[error("no iterate met tolerance after {iterations} iterations (best value {best})")]
    NotConverged { iterations: usize, best: f64 },

    #[error("simplex stalled after {pivots} pivots")]
    Stalled { pivots: usize },

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl LeakError {
    pub fn infeasible(reason: impl Into<String>) -> Self {
        LeakError::Infeasible { reason: reason.into(), minimum: None }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            LeakError::Infeasible { .. } => 3,
            LeakError::NotConverged { .. }
            | LeakError::Stalled { .. }
            | LeakError::Unbounded
            | LeakError::Internal(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, LeakError>;
