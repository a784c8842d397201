use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("loss mask selects no rows")]
    EmptyMask,

    #[error("{}:{line}: {msg}", file.display())]
    Data {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn data(file: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Data {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            Error::Data { .. } | Error::Io { .. } | Error::Protocol(_) => 2,
            Error::Numerical(_) => 3,
            Error::Shape { .. } | Error::NotScalar(_) | Error::EmptyMask => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
