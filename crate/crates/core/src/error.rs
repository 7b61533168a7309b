use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("file {0} contains no data rows")]
    EmptyFile(PathBuf),
    #[error("prices must be strictly positive (got {initial}, {subsequent})")]
    NonPositivePrice { initial: f64, subsequent: f64 },
    #[error("degenerate split: {train} train / {test} test records")]
    DegenerateSplit { train: usize, test: usize },
    #[error("insufficient class data: {0}")]
    InsufficientClassData(String),
    #[error("invalid class distribution: {0}")]
    InvalidDistribution(String),
    #[error("training data contains a single class")]
    SingleClassTraining,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("K = {k} exceeds the {available} available reference records")]
    KTooLarge { k: usize, available: usize },
    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("invalid fold count k = {k} for n = {n}")]
    InvalidK { k: usize, n: usize },
    #[error("every fold was degenerate (single-class complement)")]
    DegenerateFold,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("empty training set")]
    EmptyTraining,
    #[error("length mismatch: {predictions} predictions vs {truth} labels")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("empty input")]
    Empty,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported model document: {0}")]
    UnsupportedModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
