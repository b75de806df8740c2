use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error on axis `{axis}`: {detail}")]
    Dimension { axis: &'static str, detail: String },

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("model build failed at layer {index} ({layer}): {source}")]
    Build {
        index: usize,
        layer: String,
        #[source]
        source: Box<Error>,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("unsupported checkpoint: {0}")]
    Version(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("incompatible datasets: {0}")]
    Compatibility(String),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("undefined test: {0}")]
    UndefinedTest(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub(crate) fn dim(axis: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            axis,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
