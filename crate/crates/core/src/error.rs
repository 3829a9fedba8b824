use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("insufficient points: need {required}, have {available}")]
    InsufficientPoints { required: usize, available: usize },

    #[error("non-finite coordinate at index {index}")]
    NonFinite { index: usize },

    #[error("degenerate rotation: quaternion has zero norm")]
    DegenerateRotation,

    #[error("singular covariance (a scale is zero)")]
    SingularCovariance,

    #[error("numerical failure at step {step}: {what}")]
    NumericalFailure { step: usize, what: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error in {path}: {location}: {message}", path = path.display())]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("io error on {path}: {source}", path = path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
