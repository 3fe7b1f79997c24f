//! Bayesian ridge regression on flattened windows, one independent model
//! per horizon step. Hyperparameters (prior precision `a`, noise
//! precision `b`) are fitted by iterative evidence maximization.

use super::linalg::{chol_inverse, chol_solve, cholesky, quadratic_form};
use crate::data::WindowedDataset;
use crate::error::ModelError;
use crate::predictive::PredictiveDistribution;

const EVIDENCE_TOL: f64 = 1e-6;
const MAX_EVIDENCE_ITERS: usize = 300;

/// Gaussian weight posterior for one horizon step. Targets are centered
/// during fitting; `target_offset` restores the scale at prediction time.
#[derive(Debug, Clone)]
pub struct RidgePosterior {
    /// Posterior mean, `dim` entries; the bias weight is last.
    pub mean: Vec<f64>,
    /// Posterior covariance, row-major (dim x dim).
    pub covariance: Vec<f64>,
    /// Residual noise variance 1/b.
    pub noise_variance: f64,
    pub prior_precision: f64,
    pub noise_precision: f64,
    pub iterations: usize,
    target_offset: f64,
    dim: usize,
}

impl RidgePosterior {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Predictive mean and variance for one feature row (without bias;
    /// the bias input is appended internally).
    pub fn predict(&self, features: &[f64]) -> Result<(f64, f64), ModelError> {
        if features.len() + 1 != self.dim {
            return Err(ModelError::Shape {
                got: vec![features.len()],
                expected: vec![self.dim - 1],
            });
        }
        let mut x = Vec::with_capacity(self.dim);
        x.extend_from_slice(features);
        x.push(1.0);
        let mean: f64 = x.iter().zip(&self.mean).map(|(a, b)| a * b).sum::<f64>()
            + self.target_offset;
        let variance = self.noise_variance + quadratic_form(&self.covariance, self.dim, &x);
        Ok((mean, variance))
    }

    pub fn distribution(&self, features: &[f64]) -> Result<PredictiveDistribution, ModelError> {
        let (mean, variance) = self.predict(features)?;
        Ok(PredictiveDistribution::Gaussian { mean, variance })
    }
}

/// One posterior per horizon step over the same flattened inputs.
#[derive(Debug, Clone)]
pub struct RidgeModel {
    pub per_step: Vec<RidgePosterior>,
}

impl RidgeModel {
    pub fn horizon(&self) -> usize {
        self.per_step.len()
    }

    pub fn predict_window(
        &self,
        features: &[f64],
    ) -> Result<Vec<PredictiveDistribution>, ModelError> {
        self.per_step
            .iter()
            .map(|p| p.distribution(features))
            .collect()
    }
}

/// Fit with fixed hyperparameters: Sigma = (a I + b X^T X)^{-1},
/// mean = b Sigma X^T y. `x` is (n, d) row-major without the bias column.
pub fn ridge_fit_fixed(
    x: &[f64],
    n: usize,
    d: usize,
    y: &[f64],
    prior_precision: f64,
    noise_precision: f64,
) -> Result<RidgePosterior, ModelError> {
    validate_inputs(x, n, d, y)?;
    let dim = d + 1;
    let (xtx, xty, _) = gram(x, n, d, y, 0.0);
    let posterior = solve_posterior(&xtx, &xty, dim, prior_precision, noise_precision)?;
    Ok(RidgePosterior {
        mean: posterior.0,
        covariance: posterior.1,
        noise_variance: 1.0 / noise_precision,
        prior_precision,
        noise_precision,
        iterations: 0,
        target_offset: 0.0,
        dim,
    })
}

/// Evidence-maximized fit. Alternates the posterior solve with the
/// standard fixed-point updates
/// `gamma = dim - a tr(Sigma)`, `a = gamma / |m|^2`,
/// `b = (n - gamma) / |y - X m|^2` until both precisions move less than
/// the tolerance or the iteration cap is hit.
pub fn ridge_fit(x: &[f64], n: usize, d: usize, y: &[f64]) -> Result<RidgePosterior, ModelError> {
    validate_inputs(x, n, d, y)?;
    let dim = d + 1;
    let offset = y.iter().sum::<f64>() / n as f64;
    let (xtx, xty, y_centered) = gram(x, n, d, y, offset);

    let var_y = y_centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let mut a = 1.0;
    let mut b = if var_y > 0.0 { 1.0 / var_y } else { 1.0 };
    let mut iterations = 0;
    let mut mean = vec![0.0; dim];
    let mut covariance = vec![0.0; dim * dim];
    for iter in 0..MAX_EVIDENCE_ITERS {
        iterations = iter + 1;
        let (m, sigma) = solve_posterior(&xtx, &xty, dim, a, b)?;
        mean = m;
        covariance = sigma;
        let trace: f64 = (0..dim).map(|i| covariance[i * dim + i]).sum();
        let gamma_eff = dim as f64 - a * trace;
        let m_sq: f64 = mean.iter().map(|v| v * v).sum();
        let mut residual = 0.0;
        for row in 0..n {
            let mut pred = mean[dim - 1]; // bias
            for j in 0..d {
                pred += x[row * d + j] * mean[j];
            }
            let r = y_centered[row] - pred;
            residual += r * r;
        }
        let a_new = if m_sq > 1e-300 { gamma_eff / m_sq } else { a };
        let denom = (n as f64 - gamma_eff).max(1e-10);
        let b_new = if residual > 1e-300 {
            denom / residual
        } else {
            b * 10.0
        };
        let moved = ((a_new - a) / a).abs() + ((b_new - b) / b).abs();
        a = a_new;
        b = b_new;
        if moved < EVIDENCE_TOL {
            // one final posterior at the converged hyperparameters
            let (m, sigma) = solve_posterior(&xtx, &xty, dim, a, b)?;
            mean = m;
            covariance = sigma;
            break;
        }
    }
    Ok(RidgePosterior {
        mean,
        covariance,
        noise_variance: 1.0 / b,
        prior_precision: a,
        noise_precision: b,
        iterations,
        target_offset: offset,
        dim,
    })
}

/// Fit one posterior per horizon step from a windowed dataset.
pub fn ridge_fit_windows(train: &WindowedDataset) -> Result<RidgeModel, ModelError> {
    let n = train.n();
    let d = crate::data::WINDOW_LEN * crate::data::NUM_CHANNELS;
    let horizon = train.horizon();
    let x = train.inputs_flat();
    let mut per_step = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let y: Vec<f64> = (0..n).map(|i| train.target(i)[k]).collect();
        per_step.push(ridge_fit(x, n, d, &y)?);
    }
    Ok(RidgeModel { per_step })
}

fn validate_inputs(x: &[f64], n: usize, d: usize, y: &[f64]) -> Result<(), ModelError> {
    if n == 0 || x.len() != n * d || y.len() != n {
        return Err(ModelError::Shape {
            got: vec![x.len(), y.len()],
            expected: vec![n * d, n],
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(ModelError::Config("non-finite ridge input".into()));
    }
    Ok(())
}

/// X^T X and X^T y over the bias-augmented design matrix, with the target
/// shifted by `offset`.
fn gram(x: &[f64], n: usize, d: usize, y: &[f64], offset: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dim = d + 1;
    let mut xtx = vec![0.0; dim * dim];
    let mut xty = vec![0.0; dim];
    let y_centered: Vec<f64> = y.iter().map(|v| v - offset).collect();
    for row in 0..n {
        let features = &x[row * d..(row + 1) * d];
        let target = y_centered[row];
        for i in 0..d {
            let xi = features[i];
            if xi == 0.0 {
                continue;
            }
            for j in i..d {
                xtx[i * dim + j] += xi * features[j];
            }
            xtx[i * dim + d] += xi;
            xty[i] += xi * target;
        }
        xtx[d * dim + d] += 1.0;
        xty[d] += target;
    }
    // mirror the upper triangle
    for i in 0..dim {
        for j in (i + 1)..dim {
            xtx[j * dim + i] = xtx[i * dim + j];
        }
    }
    (xtx, xty, y_centered)
}

fn solve_posterior(
    xtx: &[f64],
    xty: &[f64],
    dim: usize,
    a: f64,
    b: f64,
) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
    let mut precision = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            precision[i * dim + j] = b * xtx[i * dim + j];
        }
        precision[i * dim + i] += a;
    }
    let l = cholesky(&precision, dim).ok_or_else(|| {
        ModelError::Config("ridge precision matrix is not positive definite".into())
    })?;
    let rhs: Vec<f64> = xty.iter().map(|v| b * v).collect();
    let mean = chol_solve(&l, dim, &rhs);
    let covariance = chol_inverse(&l, dim);
    Ok((mean, covariance))
}


// ---------------------------------------------------------------------------
// Checkpoint packing: one named array per posterior component plus a
// scalar metadata block, so ridge models ride the same container as the
// neural checkpoints.

impl RidgeModel {
    pub fn to_params(&self) -> autodiff::ParamSet {
        let mut params = autodiff::ParamSet::new();
        for (k, p) in self.per_step.iter().enumerate() {
            params.insert(
                &format!("ridge.s{k}.mean"),
                autodiff::Tensor::from_vec(p.mean.clone()),
            );
            params.insert(
                &format!("ridge.s{k}.cov"),
                autodiff::Tensor::new(vec![p.dim, p.dim], p.covariance.clone())
                    .expect("covariance is square"),
            );
            params.insert(
                &format!("ridge.s{k}.meta"),
                autodiff::Tensor::from_vec(vec![
                    p.noise_variance,
                    p.prior_precision,
                    p.noise_precision,
                    p.target_offset,
                    p.iterations as f64,
                ]),
            );
        }
        params
    }

    pub fn from_params(params: &autodiff::ParamSet) -> Result<RidgeModel, ModelError> {
        let mut per_step = Vec::new();
        for k in 0.. {
            let Some(mean) = params.get(&format!("ridge.s{k}.mean")) else {
                break;
            };
            let cov = params
                .get(&format!("ridge.s{k}.cov"))
                .ok_or_else(|| ModelError::Config(format!("step {k}: missing covariance")))?;
            let meta = params
                .get(&format!("ridge.s{k}.meta"))
                .ok_or_else(|| ModelError::Config(format!("step {k}: missing metadata")))?;
            let dim = mean.len();
            if cov.shape() != [dim, dim] || meta.len() != 5 {
                return Err(ModelError::Config(format!("step {k}: malformed entry")));
            }
            per_step.push(RidgePosterior {
                mean: mean.data().to_vec(),
                covariance: cov.data().to_vec(),
                noise_variance: meta.data()[0],
                prior_precision: meta.data()[1],
                noise_precision: meta.data()[2],
                target_offset: meta.data()[3],
                iterations: meta.data()[4] as usize,
                dim,
            });
        }
        if per_step.is_empty() {
            return Err(ModelError::Config("no ridge steps in checkpoint".into()));
        }
        Ok(RidgeModel { per_step })
    }
}
