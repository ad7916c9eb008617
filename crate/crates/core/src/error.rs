use thiserror::Error;

/// Errors raised across model construction, analysis, synthesis and simulation.
#[derive(Debug, Error)]
pub enum Error {
    /// A state or transition violates the system model.
    #[error("model violation: {0}")]
    ModelViolation(String),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data (model or policy files) failed validation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A linear solve failed or produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A rate target cannot be bracketed by the available policies.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// An operation was called outside its contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An iterative procedure ran out of iterations.
    #[error("did not converge: {0}")]
    NotConverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
