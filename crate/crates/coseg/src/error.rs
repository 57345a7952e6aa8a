use std::path::PathBuf;

use coseg_core::CoreError;

/// Errors surfaced by the IO layer and the command-line driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file content; `position` is a line number for text
    /// formats and a byte offset for binary formats.
    #[error("{path}: {at} {position}: {message}")]
    Parse {
        path: PathBuf,
        at: Position,
        position: u64,
        message: String,
    },

    /// Invalid flags or inconsistent command-line usage.
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Line,
    ByteOffset,
}

impl std::fmt::Display for Position {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Position::Line => write!(f, "line"),
            Position::ByteOffset => write!(f, "byte offset"),
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse_line(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            at: Position::Line,
            position: line,
            message: message.into(),
        }
    }

    pub fn parse_offset(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            at: Position::ByteOffset,
            position: offset,
            message: message.into(),
        }
    }

    /// Process exit code: 1 for validation and contract failures, 2 for
    /// I/O and parse failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(CoreError::Data(_)) => 2,
            Error::Core(_) => 1,
            Error::Usage(_) => 1,
            Error::Io { .. } | Error::Parse { .. } => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
