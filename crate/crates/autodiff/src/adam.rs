//! Bias-corrected Adam.

use crate::error::{AdError, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Adam moment state. Defaults match the training recipe used throughout
/// this workspace: lr 1e-4, beta1 0.9, beta2 0.999, eps 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `grads` aligns with the parameter set by index; `None`
    /// means the parameter did not participate in the loss (zero gradient).
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<Tensor>]) -> Result<()> {
        assert_eq!(grads.len(), params.len(), "gradient/parameter count");
        for (id, grad) in grads.iter().enumerate() {
            if let Some(g) = grad {
                if !g.is_finite() {
                    return Err(AdError::Numeric {
                        what: format!("gradient of parameter `{}`", params.by_id(id).name),
                    });
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (id, grad) in grads.iter().enumerate() {
            let m = &mut self.first_moment[id];
            let v = &mut self.second_moment[id];
            let theta = params.by_id_mut(id).value.data_mut();
            match grad {
                Some(g) => {
                    for ((m, v), (theta, &g)) in
                        m.iter_mut().zip(v.iter_mut()).zip(theta.iter_mut().zip(g.data()))
                    {
                        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *theta -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                    }
                }
                None => {
                    // Zero gradient: moments decay, parameters move only if
                    // stale momentum remains.
                    for ((m, v), theta) in m.iter_mut().zip(v.iter_mut()).zip(theta.iter_mut()) {
                        *m *= self.beta1;
                        *v *= self.beta2;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *theta -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = single_param(1.5);
        let mut adam = Adam::new(&params, 1e-2);
        adam.step(&mut params, &[None]).unwrap();
        assert_eq!(params.get("w").unwrap().item(), 1.5);
        assert_eq!(adam.step_count(), 1);
        // Explicit zero tensor behaves the same.
        adam.step(&mut params, &[Some(Tensor::scalar(0.0))]).unwrap();
        assert_eq!(params.get("w").unwrap().item(), 1.5);
    }

    #[test]
    fn constant_gradient_update_approaches_learning_rate() {
        // Scalar reference: with g constant, m_hat -> g and v_hat -> g^2,
        // so |delta| -> lr * g / (|g| + eps) ~ lr.
        let mut params = single_param(0.0);
        let lr = 1e-3;
        let mut adam = Adam::new(&params, lr);
        let mut prev = 0.0;
        let mut last_delta = 0.0;
        for _ in 0..500 {
            adam.step(&mut params, &[Some(Tensor::scalar(2.0))]).unwrap();
            let now = params.get("w").unwrap().item();
            last_delta = (now - prev).abs();
            prev = now;
        }
        assert!(
            (last_delta - lr).abs() < 1e-6,
            "expected step ~{lr}, got {last_delta}"
        );
    }

    #[test]
    fn first_step_matches_hand_rolled_adam() {
        // One step of the reference recurrence computed by hand.
        let g = 0.3;
        let lr = 0.01;
        let mut params = single_param(1.0);
        let mut adam = Adam::new(&params, lr);
        adam.step(&mut params, &[Some(Tensor::scalar(g))]).unwrap();
        let m_hat = (0.1 * g) / (1.0 - 0.9f64);
        let v_hat = (0.001 * g * g) / (1.0 - 0.999f64);
        let expect = 1.0 - lr * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((params.get("w").unwrap().item() - expect).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_is_rejected_by_name() {
        let mut params = single_param(0.0);
        let mut adam = Adam::new(&params, 1e-3);
        let err = adam
            .step(&mut params, &[Some(Tensor::scalar(f64::NAN))])
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`w`"), "error should name the parameter: {msg}");
    }
}
