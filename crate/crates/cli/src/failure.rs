use std::fmt;
use std::path::Path;

use frera_core::Error;

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration: exit 1.
    Usage(String),
    /// Unreadable or malformed inputs: exit 2.
    Data(String),
    /// Non-finite values or failed checks: exit 3.
    Numerical(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::Data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidArgument(_) => Failure::Usage(msg),
            Error::Numerical(_) | Error::NonFinite { .. } => Failure::Numerical(msg),
            Error::Shape { .. }
            | Error::Parse { .. }
            | Error::Dataset(_)
            | Error::Checkpoint(_)
            | Error::Io { .. }
            | Error::Json(_) => Failure::Data(msg),
        }
    }
}
