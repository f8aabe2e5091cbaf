use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TseError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TseError {
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("input too short for {op}: need at least {needed} samples/frames, got {got}")]
    TooShort {
        op: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("autodiff error: {0}")]
    Graph(String),

    #[error("degenerate signal: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error in {path}: {field}: {detail}")]
    Format {
        path: String,
        field: String,
        detail: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TseError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TseError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        TseError::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub fn format(path: impl Into<String>, field: impl Into<String>, detail: impl Into<String>) -> Self {
        TseError::Format {
            path: path.into(),
            field: field.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TseError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// 1 = usage, 2 = data, 3 = numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            TseError::InvalidArgument(_) | TseError::Config(_) => 1,
            TseError::Numerical(_) | TseError::Domain { .. } | TseError::Graph(_) => 3,
            _ => 2,
        }
    }
}
