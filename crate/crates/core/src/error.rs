use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated an operation's precondition (shape or length mismatch, bad argument).
    #[error("usage error: {0}")]
    Usage(String),

    /// Invalid configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// A binary file or buffer does not follow its declared format.
    #[error("format error{}: {msg}", path_suffix(.path))]
    Format { path: Option<PathBuf>, msg: String },

    /// Text input (OFF/OBJ) failed to parse.
    #[error("parse error at {}line {line}: {msg}", path_prefix(.path))]
    Parse {
        path: Option<PathBuf>,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate plane: normal part has norm {norm:e}")]
    DegeneratePlane { norm: f64 },

    #[error("degenerate plane fit at point {index}: neighborhood is rank deficient")]
    DegenerateFit { index: usize },

    #[error("mesh has no face with positive area")]
    EmptySurface,

    #[error("dataset error: {0}")]
    Dataset(String),

    /// NaN or infinity produced during a numerical computation.
    #[error("numerical failure: {0}")]
    NonFinite(String),
}

fn path_suffix(path: &Option<PathBuf>) -> String {
    path.as_ref()
        .map(|p| format!(" in {}", p.display()))
        .unwrap_or_default()
}

fn path_prefix(path: &Option<PathBuf>) -> String {
    path.as_ref()
        .map(|p| format!("{} ", p.display()))
        .unwrap_or_default()
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format {
            path: None,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a file path to format and parse errors that lack one.
    pub fn with_path(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::Format { path: None, msg } => Error::Format {
                path: Some(path.into()),
                msg,
            },
            Error::Parse {
                path: None,
                line,
                msg,
            } => Error::Parse {
                path: Some(path.into()),
                line,
                msg,
            },
            other => other,
        }
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Usage(_) | Error::Config(_) => ErrorKind::Usage,
            Error::NonFinite(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}
