use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Failures mapped to process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments, spec files or inputs (exit 1).
    #[error("{0}")]
    Validation(String),
    /// Anything that went wrong while running (exit 2).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<transcender::Error> for CliError {
    fn from(e: transcender::Error) -> Self {
        use transcender::Error as E;
        match e {
            E::Contract(_) | E::Input(_) | E::Format { .. } | E::Json(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}
