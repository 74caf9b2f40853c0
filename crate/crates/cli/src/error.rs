use std::fmt::Display;
use std::path::Path;
use std::process::ExitCode;

/// Failure of a subcommand. Bad input is reported before anything is
/// written; runtime failures can leave partial output behind.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Invalid(_) => ExitCode::from(1),
            CliError::Runtime(_) => ExitCode::from(2),
        }
    }

    pub fn invalid(path: &Path, e: impl Display) -> CliError {
        CliError::Invalid(format!("{}: {e}", path.display()))
    }

    pub fn runtime(path: &Path, e: impl Display) -> CliError {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<lcsim_core::config::ConfigError> for CliError {
    fn from(e: lcsim_core::config::ConfigError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
