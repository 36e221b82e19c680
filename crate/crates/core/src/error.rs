use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain of a function.
    #[error("domain error in {routine}: {detail}")]
    Domain {
        routine: &'static str,
        detail: String,
    },

    #[error("{routine} did not converge after {iterations} iterations")]
    NoConvergence {
        routine: &'static str,
        iterations: usize,
    },

    /// The sample moments do not determine a positive noise variance.
    #[error("degenerate sample set: {0}")]
    DegenerateSample(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("no candidate noise level identified any background voxel")]
    NoNoiseVoxels,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid phantom: {0}")]
    Phantom(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed NIfTI data: {0}")]
    MalformedHeader(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("schema violation: {0}")]
    Schema(String),

    /// A report and a ground-truth file describe different inputs.
    #[error("mismatched inputs: {0}")]
    Mismatch(String),
}

impl Error {
    pub(crate) fn domain(routine: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            routine,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
