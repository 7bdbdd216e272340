use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AtlasError {
    #[error("no usable reasoning traces")]
    EmptyCorpus,
    #[error("vector {index} has dimension {found}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, found: usize },
    #[error("vector {0} has a non-finite component")]
    NonFinite(usize),
    #[error("row {row}: perplexity {target} unreachable (closest {achieved})")]
    CalibrationFailure { row: usize, target: f64, achieved: f64 },
    #[error("non-finite value at iteration {iteration}")]
    NumericalError { iteration: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid t-SNE configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Harness(#[from] maric_core::harness::HarnessError),
    #[error(transparent)]
    Backend(#[from] maric_core::backend::BackendError),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> AtlasError + '_ {
    move |source| AtlasError::Io {
        path: path.to_path_buf(),
        source,
    }
}
