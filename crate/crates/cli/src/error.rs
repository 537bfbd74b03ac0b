use seaice_core::Error as CoreError;

/// Command failure with its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("mesh mismatch: {0}")]
    MeshMismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Io(_) => 4,
            CliError::MeshMismatch(_) => 5,
        }
    }
}

fn innermost(e: &CoreError) -> &CoreError {
    match e {
        CoreError::Step { source, .. } => innermost(source),
        other => other,
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match innermost(&e) {
            CoreError::NonConvergence { .. } | CoreError::LinearSolver(_) => CliError::NonConvergence(msg),
            CoreError::Io(_) | CoreError::Format(_) => CliError::Io(msg),
            CoreError::MeshMismatch(_) => CliError::MeshMismatch(msg),
            CoreError::InvalidArgument(_) | CoreError::MissingPatchStructure | CoreError::OutOfRange { .. } | CoreError::Step { .. } => {
                CliError::Config(msg)
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
