use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, configuration file or case setup.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }
}

impl From<dspe_cstr4::Error> for CliError {
    fn from(e: dspe_cstr4::Error) -> Self {
        match e {
            dspe_cstr4::Error::InvalidCase(m) => CliError::Config(m),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<dspe_core::Error> for CliError {
    fn from(e: dspe_core::Error) -> Self {
        match e {
            dspe_core::Error::UnknownModel(_) | dspe_core::Error::InvalidArgument(_) => CliError::Config(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
