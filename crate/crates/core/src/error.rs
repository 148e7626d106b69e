use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ShapeError: {0}")]
    Shape(String),

    #[error("DegenerateEmbedding: {0}")]
    DegenerateEmbedding(String),

    #[error("NumericalError: {0}")]
    Numerical(String),

    #[error("TimestepError: timestep {t} outside [{min}, {max}]")]
    Timestep { t: i64, min: i64, max: i64 },

    #[error("MaskError: {0}")]
    Mask(String),

    #[error("BoundsError: {0}")]
    Bounds(String),

    #[error("ConfigError: {0}")]
    Config(String),

    #[error("UndefinedMetric: {0}")]
    UndefinedMetric(String),

    #[error("EmptyRun: no failure records to aggregate")]
    EmptyRun,

    #[error("DuplicateSample: sample id `{0}` appears more than once")]
    DuplicateSample(String),

    #[error("DivergenceError: non-finite loss at step {step}")]
    Divergence { step: usize },

    #[error("FormatError: {0}")]
    Format(String),

    #[error("IoError: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JsonError: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CsvError: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
