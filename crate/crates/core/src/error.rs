use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent shapes, dimensions or settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or inconsistent input data.
    #[error("{}: {message}", location(.path, .line))]
    Format {
        path: Option<PathBuf>,
        /// 1-based line number for text formats, byte offset for binary ones.
        line: Option<u64>,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    /// NaN or infinite values produced during training.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("empty text: {0:?} contains no tokens")]
    EmptyText(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn location(path: &Option<PathBuf>, line: &Option<u64>) -> String {
    match (path, line) {
        (Some(p), Some(l)) => format!("{}:{}", p.display(), l),
        (Some(p), None) => p.display().to_string(),
        (None, Some(l)) => format!("line {l}"),
        (None, None) => "format error".to_string(),
    }
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(line: Option<u64>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: None,
            line,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a file path to a format error that was raised by an in-memory parser.
    pub fn with_path(self, p: impl Into<PathBuf>) -> Self {
        match self {
            Error::Format {
                path: None,
                line,
                message,
            } => Error::Format {
                path: Some(p.into()),
                line,
                message,
            },
            other => other,
        }
    }

    /// Line number (text formats) or byte offset (binary formats) of a format error.
    pub fn line(&self) -> Option<u64> {
        match self {
            Error::Format { line, .. } => *line,
            _ => None,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Format { .. } | Error::Data(_) | Error::EmptyText(_) | Error::Io { .. } => 2,
            Error::Numeric(_) => 3,
        }
    }
}
