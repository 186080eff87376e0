use thiserror::Error;

/// Errors raised while building or solving multiaffine problems.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch for block `{block}` in equation {equation}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        block: String,
        equation: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("assignment has {got} blocks, system declares {expected}")]
    AssignmentLength { expected: usize, got: usize },

    #[error("block `{0}` is not part of the system")]
    UnknownBlock(String),

    #[error("invalid term in equation {equation}: {reason}")]
    InvalidTerm { equation: usize, reason: String },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("matrix has no positive eigenvalue")]
    NoPositiveEigenvalue,

    #[error("Q2 is not injective: lambda_min(Q2^T Q2) = {0:e}")]
    Q2NotInjective(f64),

    #[error("conjugate gradient stopped after {iterations} iterations with residual {residual:e} (target {target:e})")]
    CgNotConverged {
        iterations: usize,
        residual: f64,
        target: f64,
    },

    #[error("subproblem for block `{block}` failed at iteration {k}: {source}")]
    Subproblem {
        block: String,
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("strict assertion failed: {0}")]
    AssertionFailed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
