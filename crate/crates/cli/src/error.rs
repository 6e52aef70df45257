use thiserror::Error;

/// Failures mapped onto the exit-code contract.
#[derive(Debug, Error)]
pub enum CliError {
    /// Exit 2.
    #[error("{0}")]
    Usage(String),
    /// Exit 1.
    #[error("{0}")]
    Violation(String),
    /// Exit 3.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Exit 2.
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Violation(_) => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<kmcert::Error> for CliError {
    fn from(e: kmcert::Error) -> Self {
        match e {
            kmcert::Error::Structure(m) | kmcert::Error::Parameter(m) => CliError::Usage(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}
