use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("value range is degenerate (vmin == vmax)")]
    DegenerateRange,
    #[error("volume dimensions differ: {expected:?} vs {got:?}")]
    DimsMismatch { expected: [usize; 3], got: [usize; 3] },
    #[error("vector length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no usable voxels: the system is empty")]
    EmptySystem,
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid transfer function: {0}")]
    InvalidTransferFunction(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("reference series is constant")]
    ConstantSeries,
    #[error("tridiagonal factorization broke down at row {row}")]
    SingularSystem { row: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("image sizes differ: {a:?} vs {b:?}")]
    SizeMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}
