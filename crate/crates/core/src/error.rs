use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated a precondition (shapes, ranges, empty inputs).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("power iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: bad magic bytes", path.display())]
    BadMagic { path: PathBuf },

    #[error("{}: unsupported checkpoint version {found}", path.display())]
    BadVersion { path: PathBuf, found: u32 },

    #[error("{}: checksum mismatch (stored {stored:#018x}, computed {computed:#018x})", path.display())]
    Checksum {
        path: PathBuf,
        stored: u64,
        computed: u64,
    },

    #[error("{}: length error at offset {offset}: expected {expected} bytes, found {found}", path.display())]
    Length {
        path: PathBuf,
        offset: usize,
        expected: usize,
        found: usize,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NoConvergence { .. })
    }
}
