use thiserror::Error;

/// Errors raised by the sea-ice core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh has no patch structure (initial subdivisions must be even)")]
    MissingPatchStructure,

    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),

    #[error("index {index} out of range (valid: {valid})")]
    OutOfRange { index: usize, valid: String },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("linear solver failure: {0}")]
    LinearSolver(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn at_step(self, step: usize) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }

    /// True when the error (or the error it wraps) is a convergence failure.
    pub fn is_nonconvergence(&self) -> bool {
        match self {
            Error::NonConvergence { .. } | Error::LinearSolver(_) => true,
            Error::Step { source, .. } => source.is_nonconvergence(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
