use std::path::{Path, PathBuf};

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const MISMATCH: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const SPACE_TOO_LARGE: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {key}: {message}", file.display())]
    Config {
        file: PathBuf,
        key: String,
        message: String,
    },

    #[error("{}: {source}", file.display())]
    Io {
        file: PathBuf,
        source: std::io::Error,
    },

    #[error("{0}")]
    Search(#[from] loopsched_core::Error),

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn config(file: &Path, key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            file: file.to_path_buf(),
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(file: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            file: file.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Search(loopsched_core::Error::SpaceTooLarge { .. }) => exit::SPACE_TOO_LARGE,
            _ => exit::CONFIG,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
