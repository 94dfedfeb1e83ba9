use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box [{left}, {top}, {right}, {bottom}]")]
    InvalidBox {
        left: f64,
        top: f64,
        right: f64,
        bottom: f64,
    },
    #[error("box lies outside the {width}x{height} frame")]
    DegenerateBox { width: f64, height: f64 },
    #[error("top-n of {n} requested but only {anchors} anchors per location")]
    InvalidN { n: usize, anchors: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),
    #[error("histogram region is empty")]
    DegenerateRegion,
    #[error("histogram is not normalized (segment sum {0})")]
    NonNormalized(f64),
    #[error("appearance term requested without an image")]
    MissingImage,
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("particle set has zero total weight")]
    ZeroMass,
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("{path}:{line}: {message}")]
    MalformedRow {
        path: String,
        line: u64,
        message: String,
    },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: &str, line: u64, message: impl Into<String>) -> Self {
        Error::MalformedRow {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }
}
