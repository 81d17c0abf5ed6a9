//! CLI failures carry the process exit code.

use std::fmt;

use simloop_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    /// Stage that failed, if any.
    pub stage: Option<String>,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        CliError {
            code,
            stage: None,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(EXIT_VALIDATION, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(EXIT_IO, message)
    }

    pub fn in_stage(mut self, stage: &str) -> Self {
        self.stage.get_or_insert_with(|| stage.to_string());
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.stage {
            Some(s) => write!(f, "[{s}] {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for CliError {}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Image { .. } | Error::Json { .. } | Error::IncompleteBundle(_) => EXIT_IO,
        Error::BlowUp { .. } | Error::BlowUpAtFrame { .. } | Error::OutOfDomain { .. } | Error::CflViolation { .. } => {
            EXIT_BLOWUP
        }
        _ => EXIT_VALIDATION,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::new(exit_code(&e), e.to_string())
    }
}
