use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid class label {0:?}: must be non-empty, lowercase and trimmed")]
    InvalidLabel(String),
    #[error("label set needs at least 2 labels, got {0}")]
    TooFewLabels(usize),
    #[error("duplicate label or alias {0:?} in label set")]
    DuplicateLabel(String),
    #[error("label {label:?} is not part of dataset {dataset_id:?}")]
    UnknownLabel { label: String, dataset_id: String },
    #[error("raster has {found} bytes, expected {expected}")]
    RasterSize { expected: usize, found: usize },
    #[error("aspect prompt {0} needs index >= 1 and non-empty prefix and postfix")]
    InvalidPrompt(usize),
    #[error("aspect description {0} is empty")]
    EmptyDescription(usize),
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("unknown agent role {0:?}")]
    UnknownRole(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Problems detected before any backend call is made.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("prompt template {name} missing at {path}")]
    MissingTemplate { name: String, path: PathBuf },
    #[error("prompt template {name} lacks required placeholder {placeholder}")]
    MissingPlaceholder { name: String, placeholder: String },
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
}
