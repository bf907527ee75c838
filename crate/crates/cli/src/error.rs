use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] qfei::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for configuration and input problems, 3 for numerical failures,
    /// 1 for everything else.
    pub fn exit_code(&self) -> ExitCode {
        use qfei::Error as E;
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Core(e) if e.is_numerical() => ExitCode::from(3),
            CliError::Core(
                E::InvalidInput(_) | E::Domain { .. } | E::Parse { .. } | E::UnsupportedMode(_) | E::Json(_),
            ) => ExitCode::from(2),
            _ => ExitCode::from(1),
        }
    }
}

pub fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}
