//! Exit-code classification.

use std::fmt;

use captain_core::error::Error as CoreError;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// A failure tagged with the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Failure::Usage(anyhow::anyhow!("{msg}"))
    }

    pub fn runtime(msg: impl fmt::Display) -> Self {
        Failure::Runtime(anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

/// Bad inputs and configuration are usage errors; everything that goes wrong
/// while computing is a runtime error.
impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let usage = matches!(
            e,
            CoreError::InvalidParameter(_)
                | CoreError::InvalidInput(_)
                | CoreError::ShapeMismatch { .. }
                | CoreError::Format { .. }
                | CoreError::Io { .. }
                | CoreError::Json(_)
                | CoreError::Csv(_)
        );
        if usage {
            Failure::Usage(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(e.into())
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;
