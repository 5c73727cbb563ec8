use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid definition: {0}")]
    Grid(String),

    #[error("grid mismatch: expected {expected}, found {found}")]
    GridMismatch { expected: String, found: String },

    #[error("band coverage: {0}")]
    BandCoverage(String),

    #[error("parameter: {0}")]
    Parameter(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("internal consistency: {0}")]
    Consistency(String),

    #[error("lookup: {0}")]
    Lookup(String),

    #[error("constraint infeasibility: accepted {accepted} of {target} entries after {rounds} rounds (acceptance rate {rate:.4})")]
    Infeasible {
        accepted: usize,
        target: usize,
        rounds: usize,
        rate: f64,
    },

    #[error("shape: {0}")]
    Shape(String),

    #[error("config: {0}")]
    Config(String),

    #[error("domain: {0}")]
    Domain(String),

    #[error("format: {0}")]
    Format(String),

    #[error("argument: {0}")]
    Argument(String),

    #[error("{path}: already exists (pass overwrite to replace)")]
    Exists { path: PathBuf },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("kernel mismatch: {0}")]
    KernelMismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
