//! Dense linear algebra and the LP oracle used by clustering, buffering and
//! the branch-and-bound.

mod dense;
mod matrix;
mod simplex;

pub use dense::{cholesky, expm, Lu};
pub use matrix::{dot, matmul, squared_distance, Matrix};
pub use simplex::{solve_lp, LpError, LpOptions, LpProblem, LpSolution, LpStatus};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        op: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is singular (pivot {pivot})")]
    Singular { pivot: usize },
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
}
