//! Unified location/scale view over the three probabilistic forecast
//! families plus the degenerate point forecast. All values in mg/dL.

use crate::dist::{norm_cdf, norm_quantile, StudentT};

#[derive(Debug, Clone, PartialEq)]
pub enum PredictiveDistribution {
    /// Evidential marginal.
    StudentT(StudentT),
    /// Monte Carlo samples, kept sorted.
    Empirical { samples: Vec<f64> },
    /// Ridge predictive.
    Gaussian { mean: f64, variance: f64 },
    /// Plain point forecast; zero-width intervals.
    Point(f64),
}

impl PredictiveDistribution {
    pub fn empirical(mut samples: Vec<f64>) -> Self {
        assert!(samples.len() >= 2, "need at least two samples");
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        PredictiveDistribution::Empirical { samples }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::StudentT(t) => t.location,
            Self::Empirical { samples } => samples.iter().sum::<f64>() / samples.len() as f64,
            Self::Gaussian { mean, .. } => *mean,
            Self::Point(v) => *v,
        }
    }

    /// Predictive standard deviation; sample std (n-1) for the empirical
    /// family, zero for point forecasts.
    pub fn std(&self) -> f64 {
        match self {
            Self::StudentT(t) => t.variance().sqrt(),
            Self::Empirical { samples } => {
                let n = samples.len() as f64;
                let mean = self.mean();
                (samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)).sqrt()
            }
            Self::Gaussian { variance, .. } => variance.sqrt(),
            Self::Point(_) => 0.0,
        }
    }

    /// Two-sided central interval at coverage `level`. Empirical intervals
    /// use order statistics at ranks ceil((1 -/+ level)/2 * n).
    pub fn central_interval(&self, level: f64) -> (f64, f64) {
        assert!(level > 0.0 && level < 1.0, "level must lie in (0,1)");
        match self {
            Self::StudentT(t) => t.central_interval(level),
            Self::Empirical { samples } => {
                let n = samples.len();
                let rank = |q: f64| -> usize {
                    ((q * n as f64).ceil() as usize).clamp(1, n)
                };
                let lo = samples[rank((1.0 - level) / 2.0) - 1];
                let hi = samples[rank((1.0 + level) / 2.0) - 1];
                (lo, hi)
            }
            Self::Gaussian { mean, variance } => {
                let z = norm_quantile((1.0 + level) / 2.0);
                let s = variance.sqrt();
                (mean - z * s, mean + z * s)
            }
            Self::Point(v) => (*v, *v),
        }
    }

    pub fn prob_below(&self, threshold: f64) -> f64 {
        match self {
            Self::StudentT(t) => t.cdf(threshold),
            Self::Empirical { samples } => {
                samples.iter().filter(|&&s| s < threshold).count() as f64 / samples.len() as f64
            }
            Self::Gaussian { mean, variance } => {
                norm_cdf((threshold - mean) / variance.sqrt())
            }
            Self::Point(v) => {
                if *v < threshold {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn prob_above(&self, threshold: f64) -> f64 {
        match self {
            Self::Empirical { samples } => {
                samples.iter().filter(|&&s| s > threshold).count() as f64 / samples.len() as f64
            }
            Self::Point(v) => {
                if *v > threshold {
                    1.0
                } else {
                    0.0
                }
            }
            _ => 1.0 - self.prob_below(threshold),
        }
    }

    pub fn contains(&self, level: f64, observation: f64) -> bool {
        let (lo, hi) = self.central_interval(level);
        lo <= observation && observation <= hi
    }
}
