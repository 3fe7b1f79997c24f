use thiserror::Error;

/// Errors raised by tensor construction, tracing, and optimization.
#[derive(Debug, Error)]
pub enum AdError {
    #[error("shape mismatch in {op}: lhs {lhs:?} vs rhs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for buffer of {len} elements")]
    BadBuffer { shape: Vec<usize>, len: usize },

    #[error("tape state error: {0}")]
    State(&'static str),

    #[error("domain error in {op}: argument {value} outside {domain}")]
    Domain {
        op: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("non-finite value in {what}")]
    Numeric { what: String },

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AdError>;
