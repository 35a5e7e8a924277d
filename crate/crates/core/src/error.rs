use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("duplicate parcel id {0:?}")]
    DuplicateParcel(String),

    #[error("data consistency error: {0}")]
    Consistency(String),

    #[error("parcel {0:?} has no pixels on the grid")]
    EmptyMask(String),

    #[error("missing band {0}")]
    MissingBand(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unsupported pixel size {0} m")]
    UnsupportedPixelSize(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("missing prerequisite {artifact}: run stage `{stage}` first")]
    MissingStage { stage: &'static str, artifact: PathBuf },

    #[error("GeoTIFF error in {path}: {message}")]
    Tiff { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
