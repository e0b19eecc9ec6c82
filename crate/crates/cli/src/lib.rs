//! File formats, configuration, and reporting for the batch tool.

use std::fmt;

pub mod config;
pub mod flo;
pub mod pnm;
pub mod report;
pub mod seq;

/// Errors partitioned by exit status: usage mistakes exit 1, unreadable or
/// malformed data exits 2, numerical aborts exit 3.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical abort: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<flowinpaint::Error> for CliError {
    fn from(e: flowinpaint::Error) -> Self {
        use flowinpaint::Error::*;
        match e {
            NonFinite { .. } | Diverged { .. } => CliError::Numeric(e.to_string()),
            InvalidConfig { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
