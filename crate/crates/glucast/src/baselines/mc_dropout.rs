//! Monte Carlo dropout: stochastic forward passes with the dropout site
//! kept active at inference time.

use autodiff::{Tape, Tensor};

use crate::data::NormalizationParams;
use crate::error::ModelError;
use crate::evidential::{aggregate_event_probs, EventAggregation};
use crate::models::{ForwardMode, HeadKind, SequenceModel};
use crate::predictive::PredictiveDistribution;

/// Samples and summary statistics for one window forecast, in mg/dL.
#[derive(Debug, Clone)]
pub struct McDropoutForecast {
    /// Row-major (n_samples, horizon) sample matrix.
    samples: Vec<f64>,
    n_samples: usize,
    horizon: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl McDropoutForecast {
    fn from_samples(samples: Vec<f64>, n_samples: usize, horizon: usize) -> Self {
        let mut mean = vec![0.0; horizon];
        for row in samples.chunks(horizon) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n_samples as f64;
        }
        let mut std = vec![0.0; horizon];
        for row in samples.chunks(horizon) {
            for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in std.iter_mut() {
            *s = (*s / (n_samples as f64 - 1.0)).sqrt();
        }
        Self {
            samples,
            n_samples,
            horizon,
            mean,
            std,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_row(&self, pass: usize) -> &[f64] {
        &self.samples[pass * self.horizon..(pass + 1) * self.horizon]
    }

    /// Point forecast: per-step sample mean.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Per-step sample standard deviation (n-1).
    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// Empirical view of one horizon step.
    pub fn distribution(&self, step: usize) -> PredictiveDistribution {
        let column = (0..self.n_samples)
            .map(|p| self.samples[p * self.horizon + step])
            .collect();
        PredictiveDistribution::empirical(column)
    }

    /// Fraction of sample paths crossing the threshold; a path crosses
    /// when any of its steps does.
    pub fn event_probability(&self, threshold: f64, below: bool) -> f64 {
        let crossings = self
            .samples
            .chunks(self.horizon)
            .filter(|row| {
                row.iter()
                    .any(|&v| if below { v < threshold } else { v > threshold })
            })
            .count();
        crossings as f64 / self.n_samples as f64
    }

    /// Per-step probabilities combined by the configured window rule,
    /// mirroring the evidential aggregation for comparisons.
    pub fn event_probability_per_step(
        &self,
        threshold: f64,
        below: bool,
        aggregation: EventAggregation,
    ) -> f64 {
        let probs: Vec<f64> = (0..self.horizon)
            .map(|k| {
                let hits = (0..self.n_samples)
                    .filter(|&p| {
                        let v = self.samples[p * self.horizon + k];
                        if below {
                            v < threshold
                        } else {
                            v > threshold
                        }
                    })
                    .count();
                hits as f64 / self.n_samples as f64
            })
            .collect();
        aggregate_event_probs(&probs, aggregation)
    }
}

/// Stochastic forward passes for a batch of windows. Pass `p` of window
/// `i` is keyed by (seed, pass) only, so results are reproducible and
/// independent of batch composition.
pub fn mc_dropout_predict_batch(
    model: &SequenceModel,
    input: &Tensor,
    n_samples: usize,
    seed: u64,
    norm: &NormalizationParams,
) -> Result<Vec<McDropoutForecast>, ModelError> {
    if model.config().head != HeadKind::Dropout {
        return Err(ModelError::Config(format!(
            "monte carlo sampling requires a dropout head, got {}",
            model.config().head.name()
        )));
    }
    if n_samples < 2 {
        return Err(ModelError::Config(format!(
            "need at least 2 samples, got {n_samples}"
        )));
    }
    let batch = input.shape()[0];
    let horizon = model.config().horizon;
    let mut per_window: Vec<Vec<f64>> = vec![Vec::with_capacity(n_samples * horizon); batch];
    for pass in 0..n_samples {
        let tape = Tape::new();
        let bound = model.bind(&tape);
        let out = model.forward(
            &tape,
            &bound,
            input,
            ForwardMode::McSample {
                seed,
                pass: pass as u64,
            },
        )?;
        let values = out.value();
        for (w, row) in values.data().chunks(horizon).enumerate() {
            per_window[w].extend(row.iter().map(|&v| norm.denorm_glucose(v)));
        }
    }
    Ok(per_window
        .into_iter()
        .map(|samples| McDropoutForecast::from_samples(samples, n_samples, horizon))
        .collect())
}

/// Single-window convenience over [`mc_dropout_predict_batch`].
pub fn mc_dropout_predict(
    model: &SequenceModel,
    window: &Tensor,
    n_samples: usize,
    seed: u64,
    norm: &NormalizationParams,
) -> Result<McDropoutForecast, ModelError> {
    let batched = if window.rank() == 2 {
        window
            .reshaped(vec![1, window.shape()[0], window.shape()[1]])
            .map_err(|_| ModelError::Shape {
                got: window.shape().to_vec(),
                expected: vec![36, 4],
            })?
    } else {
        window.clone()
    };
    Ok(mc_dropout_predict_batch(model, &batched, n_samples, seed, norm)?
        .into_iter()
        .next()
        .expect("one window in, one forecast out"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Architecture, ModelConfig};
    use autodiff::rng::SplitMix64;
    use autodiff::DropoutKey;

    fn dropout_model(rate: f64) -> SequenceModel {
        SequenceModel::new(ModelConfig {
            architecture: Architecture::Lstm,
            head: HeadKind::Dropout,
            horizon: 6,
            dropout_rate: rate,
            seed: 51,
        })
        .unwrap()
    }

    fn window(seed: u64) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        Tensor::new(vec![1, 36, 4], (0..144).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    fn unit_norm() -> NormalizationParams {
        NormalizationParams::identity()
    }

    #[test]
    fn zero_rate_gives_identical_samples() {
        let model = dropout_model(0.0);
        let f = mc_dropout_predict(&model, &window(1), 8, 99, &unit_norm()).unwrap();
        let first = f.sample_row(0).to_vec();
        for p in 1..8 {
            assert_eq!(f.sample_row(p), &first[..]);
        }
        // identical samples; std is zero up to mean-summation rounding
        assert!(f.std().iter().all(|&s| s < 1e-12));
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let model = dropout_model(0.25);
        let a = mc_dropout_predict(&model, &window(2), 16, 7, &unit_norm()).unwrap();
        let b = mc_dropout_predict(&model, &window(2), 16, 7, &unit_norm()).unwrap();
        assert_eq!(a.samples(), b.samples());
        let c = mc_dropout_predict(&model, &window(2), 16, 8, &unit_norm()).unwrap();
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn mean_and_std_are_consistent_with_samples() {
        let model = dropout_model(0.3);
        let f = mc_dropout_predict(&model, &window(3), 32, 11, &unit_norm()).unwrap();
        for k in 0..f.horizon() {
            let col: Vec<f64> = (0..f.n_samples()).map(|p| f.sample_row(p)[k]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            assert!((f.mean()[k] - mean).abs() < 1e-12);
            let var =
                col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (col.len() as f64 - 1.0);
            assert!((f.std()[k] - var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_dropout_heads_and_tiny_sample_counts() {
        let plain = dropout_model(0.2).with_head(HeadKind::Plain).unwrap();
        assert!(matches!(
            mc_dropout_predict(&plain, &window(4), 8, 1, &unit_norm()),
            Err(ModelError::Config(_))
        ));
        let model = dropout_model(0.2);
        assert!(mc_dropout_predict(&model, &window(4), 1, 1, &unit_norm()).is_err());
    }

    #[test]
    fn inverted_mask_expectation_matches_closed_form() {
        // One-parameter linear pass-through: y = dropout(w), w = 3. The
        // inverted mask keeps w/(1-r) with probability 1-r, so E[y] = w
        // and Var[y] = w^2 r/(1-r). 10^4 draws must land within three
        // standard errors of the expectation.
        let tape = Tape::new();
        let w = 3.0;
        let rate = 0.3;
        let n = 10_000;
        let x = tape.constant(Tensor::from_vec(vec![w; n]));
        let y = tape
            .dropout(
                x,
                rate,
                DropoutKey {
                    seed: 123,
                    layer: 0,
                    step: 0,
                },
            )
            .value();
        let mean = y.data().iter().sum::<f64>() / n as f64;
        let var_theory = w * w * rate / (1.0 - rate);
        let se = (var_theory / n as f64).sqrt();
        assert!(
            (mean - w).abs() < 3.0 * se,
            "mean {mean} vs {w} (se {se})"
        );
    }

    #[test]
    fn path_crossing_event_probability() {
        let f = McDropoutForecast::from_samples(
            vec![
                80.0, 75.0, // path 1 dips below 70? no
                65.0, 90.0, // path 2 crosses below
                71.0, 69.0, // path 3 crosses below
                90.0, 95.0, // path 4 no
            ],
            4,
            2,
        );
        assert_eq!(f.event_probability(70.0, true), 0.5);
        assert_eq!(f.event_probability(94.0, false), 0.25);
    }

    #[test]
    fn empirical_intervals_nest_across_levels() {
        let model = dropout_model(0.3);
        let f = mc_dropout_predict(&model, &window(6), 64, 15, &unit_norm()).unwrap();
        for k in 0..f.horizon() {
            let d = f.distribution(k);
            let mut prev = d.central_interval(0.05);
            for level in [0.2, 0.5, 0.8, 0.9, 0.95] {
                let iv = d.central_interval(level);
                assert!(iv.0 <= prev.0 && iv.1 >= prev.1, "step {k} level {level}");
                prev = iv;
            }
        }
    }

    #[test]
    fn empirical_distribution_reflects_sample_column() {
        let f = McDropoutForecast::from_samples(vec![1.0, 10.0, 3.0, 30.0, 2.0, 20.0], 3, 2);
        let d = f.distribution(1);
        assert!((d.mean() - 20.0).abs() < 1e-12);
    }
}
