use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or arguments; exit code 2.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Library(#[from] hfseq::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    /// An oracle comparison exceeded its tolerance.
    #[error("{0} oracle check(s) failed")]
    OracleFailed(usize),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) | CliError::Library(hfseq::Error::Config(_)) => ExitCode::from(2),
            _ => ExitCode::FAILURE,
        }
    }
}
