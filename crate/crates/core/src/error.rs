use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A record in a line-oriented file could not be parsed or violates an invariant.
    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("http error: {0}")]
    Http(String),

    #[error("workspace is locked by another run: {}", .0.display())]
    Locked(PathBuf),

    /// A run was halted on request at a stage boundary.
    #[error("halted after stage {0}")]
    Halted(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            msg: msg.into(),
        }
    }

    pub fn parse(source_name: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code: 1 data error, 2 config error, 3 backend error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Locked(_) => 2,
            Error::Backend(_) | Error::Http(_) => 3,
            _ => 1,
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
