//! Error classes and their exit codes.

use std::process::ExitCode;

use yaglom::Error;

#[derive(Debug)]
pub enum CliError {
    /// Config does not parse or names something unknown.
    Schema(String),
    /// Kernel or parameters fail validation.
    Validation(String),
    /// A computation ran out of its step, horizon or window budget.
    Budget(String),
    Other(anyhow::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Schema(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Budget(_) => 4,
        }
    }

    pub fn exit(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Schema(m) => write!(f, "config error: {m}"),
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Budget(m) => write!(f, "budget exhausted: {m}"),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Extinct { .. }
            | Error::TraceTooShort { .. }
            | Error::HorizonExhausted { .. }
            | Error::WindowBlowUp { .. } => CliError::Budget(e.to_string()),
            Error::TooManySteps { .. } | Error::AboveRadius { .. } | Error::Mismatch(_) => {
                CliError::Other(e.into())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}

impl From<yaglom::export::CsvError> for CliError {
    fn from(e: yaglom::export::CsvError) -> Self {
        CliError::Other(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.into())
    }
}
