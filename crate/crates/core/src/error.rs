use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("duplicate id `{id}` on line {line}")]
    DuplicateIdAtLine { id: String, line: usize },

    #[error("no embedding for id `{0}`")]
    MissingEmbedding(String),

    #[error("memory store has no records")]
    NoRecords,

    #[error("grid {grid} is finer than the image ({width}x{height})")]
    GridTooFine { grid: usize, width: usize, height: usize },

    #[error("bad magic bytes, expected `EMB1`")]
    BadMagic,

    #[error("truncated embedding file: {0}")]
    TruncatedFile(String),

    #[error("external encoder unavailable: {0}")]
    ExternalUnavailable(String),

    #[error("encoder protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("external encoder failed on `{id}`: {message}")]
    ExternalEncoder { id: String, message: String },

    #[error("forced-choice requires at least one pair")]
    EmptyPairs,

    #[error("calibration set is empty")]
    EmptyCalibrationSet,

    #[error("degenerate calibration: mean seen distance {mean_seen} >= mean novel distance {mean_novel}")]
    DegenerateCalibration { mean_seen: f64, mean_novel: f64 },

    #[error("ran out of fresh images after {0} stream events")]
    ExhaustedImages(usize),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("all samples are identical, variance is zero")]
    DegenerateVariance,

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid split fractions: {0}")]
    Fraction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidImage(_) => "invalid_image",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::DuplicateId(_) | Error::DuplicateIdAtLine { .. } => "duplicate_id",
            Error::MissingEmbedding(_) => "missing_embedding",
            Error::NoRecords => "no_records",
            Error::GridTooFine { .. } => "grid_too_fine",
            Error::BadMagic => "bad_magic",
            Error::TruncatedFile(_) => "truncated_file",
            Error::ExternalUnavailable(_) => "external_unavailable",
            Error::ProtocolViolation(_) => "protocol_violation",
            Error::ExternalEncoder { .. } => "external_error",
            Error::EmptyPairs => "empty_pairs",
            Error::EmptyCalibrationSet => "empty_calibration_set",
            Error::DegenerateCalibration { .. } => "degenerate_calibration",
            Error::ExhaustedImages(_) => "exhausted_images",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::DegenerateVariance => "degenerate_variance",
            Error::Parse { .. } => "parse_error",
            Error::Fraction(_) => "fraction_error",
            Error::Config(_) => "config_error",
            Error::Io { .. } => "io_error",
            Error::Image(_) => "image_error",
            Error::Csv(_) => "csv_error",
            Error::Json(_) => "json_error",
        }
    }
}
