//! CLI error kinds mapped to process exit codes.

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration (exit code 2).
    Config(String),
    /// Unreadable or inconsistent data (exit code 3).
    Data(String),
    /// Numerical failure inside a solver stage (exit code 4).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<atlasforge_core::CoreError> for CliError {
    fn from(e: atlasforge_core::CoreError) -> Self {
        use atlasforge_core::CoreError::*;
        match e {
            Config(m) => CliError::Config(m),
            DimensionMismatch { .. } => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
