use std::fmt;

use xferlab_core::Error;

/// Failure of a subcommand: a stable machine-readable code, the process exit
/// status and a human message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: &'static str,
    pub exit: i32,
    pub message: String,
}

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_DOMAIN: i32 = 5;

impl CliError {
    pub fn new(code: &'static str, exit: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            exit,
            message: message.into(),
        }
    }

    pub fn config(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(code, EXIT_CONFIG, message)
    }

    /// The single machine-readable line.
    pub fn code_line(&self) -> String {
        format!("XFERLAB_ERROR code={}", self.code)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::InvalidArgument(_) => Self::config("CONFIG_INVALID", message),
            Error::Layout { .. } => Self::config("LAYOUT_INVALID", message),
            Error::NonFinite(_) => Self::new("NUMERIC_NONFINITE", EXIT_NUMERIC, message),
            Error::UnreachableGoal => Self::new("UNREACHABLE_GOAL", EXIT_DOMAIN, message),
            Error::DomainMismatch(_) => Self::new("DOMAIN_MISMATCH", EXIT_DOMAIN, message),
            Error::ScheduleMismatch(_) => Self::new("SCHEDULE_MISMATCH", EXIT_DOMAIN, message),
            Error::Io { .. } => Self::new("IO_ERROR", EXIT_IO, message),
            Error::Json(_) | Error::Csv(_) => Self::new("INPUT_INVALID", EXIT_IO, message),
            Error::ShapeMismatch { .. } => Self::new("INTERNAL", EXIT_OTHER, message),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
