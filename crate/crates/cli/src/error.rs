use thiserror::Error;

/// Failures of a subcommand, each with a stable process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invariant failed: {0}")]
    Invariant(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("config mismatch: {0}")]
    Config(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error(transparent)]
    Core(histoport::Error),
}

impl From<histoport::Error> for CliError {
    fn from(e: histoport::Error) -> Self {
        use histoport::Error as E;
        match e {
            E::Io(err) => CliError::Io(err.to_string()),
            E::Checksum { .. } | E::Corrupt(_) => CliError::Integrity(e.to_string()),
            E::ConfigMismatch(_) | E::Json(_) | E::Aliasing { .. } | E::InvalidArgument(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Core(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    /// 0 success, 1 invariant failure, 2 I/O, 3 config mismatch, 4 checksum or corruption.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invariant(_) | CliError::Core(_) => 1,
            CliError::Io(_) => 2,
            CliError::Config(_) => 3,
            CliError::Integrity(_) => 4,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
