//! Non-evidential uncertainty baselines: Monte Carlo dropout inference
//! and the analytic Bayesian ridge regression.

mod linalg;
mod mc_dropout;
mod ridge;

pub use mc_dropout::{mc_dropout_predict, mc_dropout_predict_batch, McDropoutForecast};
pub use ridge::{ridge_fit, ridge_fit_fixed, ridge_fit_windows, RidgeModel, RidgePosterior};
