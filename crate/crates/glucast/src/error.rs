use std::path::PathBuf;

use thiserror::Error;

/// Errors from CSV ingestion, normalization, and windowing.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{0}` in csv header")]
    MissingColumn(String),

    #[error("non-uniform timestamp step at row index {index}: expected {expected}s, got {got}s")]
    NonUniformStep {
        index: usize,
        expected: i64,
        got: i64,
    },

    #[error("unparseable timestamp `{value}` at row {row}")]
    BadTimestamp { value: String, row: usize },

    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },

    #[error("unparseable number `{value}` in column `{column}` at row {row}")]
    Unparseable {
        column: String,
        row: usize,
        value: String,
    },

    #[error("non-positive glucose {value} at row {row}")]
    NonPositiveGlucose { value: f64, row: usize },

    #[error("series too short: {len} samples, need at least {need}")]
    TooShort { len: usize, need: usize },

    #[error("channel `{0}` has zero variance; cannot z-score")]
    DegenerateChannel(String),

    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Errors from model construction and forward passes.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad input shape {got:?}, expected {expected:?}")]
    Shape {
        got: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Ad(#[from] autodiff::AdError),
}

/// Errors from metric computation and grid-spec loading.
#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("reference glucose must be positive, got {0}")]
    NonPositiveReference(f64),

    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),

    #[error("no positive occurrences; PR-AUC undefined")]
    NoPositives,

    #[error("constant input vector; rank correlation undefined")]
    ConstantInput,

    #[error("need at least {need} non-zero differences, got {got}")]
    TooFewDifferences { need: usize, got: usize },

    #[error("score matrix too small: {rows} x {cols}, need at least 2 x 2")]
    DegenerateMatrix { rows: usize, cols: usize },

    #[error("grid spec `{name}` invalid: {reason}")]
    GridSpec { name: String, reason: String },

    #[error("domain error: {0}")]
    Domain(String),
}

/// Errors from the evidential head math.
#[derive(Debug, Error)]
pub enum EvidentialError {
    #[error("constraint violation: {0}")]
    Constraint(String),

    #[error("coverage level {0} outside (0, 1)")]
    BadLevel(f64),

    #[error("reference scale beta_r must be positive, got {0}")]
    BadReferenceScale(f64),

    #[error("non-finite head output")]
    NonFinite,

    #[error(transparent)]
    Ad(#[from] autodiff::AdError),
}

/// Top-level pipeline errors, mapped onto CLI exit codes.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },

    #[error("missing cell in score matrix: patient `{patient}`, condition `{condition}`")]
    MissingCell { patient: String, condition: String },

    #[error("dataset state: {0}")]
    State(String),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Metric(#[from] MetricError),

    #[error(transparent)]
    Evidential(#[from] EvidentialError),

    #[error(transparent)]
    Ad(#[from] autodiff::AdError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl RunError {
    /// Distinct process exit codes per error family.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Data(_) | RunError::State(_) | RunError::MissingCell { .. } => 3,
            RunError::Diverged { .. }
            | RunError::Model(_)
            | RunError::Evidential(_)
            | RunError::Ad(_) => 4,
            RunError::Io { .. } => 5,
            RunError::Metric(_) => 4,
        }
    }
}
