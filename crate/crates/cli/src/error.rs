use thiserror::Error;

/// Failure classes with fixed process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<tvb_core::Error> for CliError {
    fn from(e: tvb_core::Error) -> Self {
        let msg = e.to_string();
        if e.is_io() {
            CliError::Io(msg)
        } else if e.is_numerical() {
            CliError::Numerical(msg)
        } else {
            CliError::Usage(msg)
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
