use thiserror::Error;

/// Errors raised by the solvers, audits and the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    /// Parameter outside the domain of validity of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Geometry is invalid or a region became empty.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Requested problem size exceeds a configured budget.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// Iterative solver failed to reach its tolerance.
    #[error("{solver} did not converge after {iterations} iterations (last relative residual {last:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    /// Line search could not find any descent step.
    #[error("descent stagnated at iteration {iteration} with gradient norm {gradient_norm:.3e}")]
    Stagnation {
        iteration: usize,
        gradient_norm: f64,
        energy: f64,
        /// Values of the last iterate, kept so callers can inspect or restart.
        iterate: Vec<f64>,
    },

    /// Caller broke a precondition (shape mismatch, zero mass, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
