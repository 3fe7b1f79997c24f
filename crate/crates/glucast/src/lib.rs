//! Uncertainty-aware glucose forecasting toolkit.

pub mod baselines;
pub mod data;
pub mod dist;
pub mod error;
pub mod evidential;
pub mod metrics;
pub mod models;
pub mod predictive;
pub mod runner;
pub mod synth;

pub use error::{DataError, EvidentialError, MetricError, ModelError, RunError};
