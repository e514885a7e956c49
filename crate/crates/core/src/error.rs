use thiserror::Error;

/// Errors produced by grid construction, operators, solvers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    /// An operator received a field on the wrong lattice or of the wrong size.
    #[error("lattice mismatch: {0}")]
    Lattice(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear solver failed: {message} (residual history: {residuals:?})")]
    Solver {
        message: String,
        residuals: Vec<f64>,
    },

    #[error("Picard iteration did not converge in {iterations} iterations (update history: {history:?})")]
    Nonconvergence { iterations: usize, history: Vec<f64> },

    /// A solver failure inside a time loop, tagged with the step that failed.
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn lattice(msg: impl Into<String>) -> Self {
        Error::Lattice(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerics (linear or nonlinear solve) as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Solver { .. } | Error::Nonconvergence { .. } => true,
            Error::Step { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
