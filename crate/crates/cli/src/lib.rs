//! Experiment harness: configuration, orchestration and artifact output for
//! the `ymlab` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;

pub use config::ExperimentConfig;

use std::fmt;

/// Failure classified by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config, unreadable input: exit 2.
    Usage(String),
    /// Instability or a tolerance breach: exit 1.
    Numerical(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Self::Numerical(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Numerical(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ymlab_core::Error> for CliError {
    fn from(e: ymlab_core::Error) -> Self {
        match e {
            ymlab_core::Error::Instability { .. } => Self::Numerical(e.to_string()),
            _ => Self::Usage(e.to_string()),
        }
    }
}
