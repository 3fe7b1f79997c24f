//! Empirical coverage of central predictive intervals and the mean
//! calibration error.

use crate::error::MetricError;
use crate::predictive::PredictiveDistribution;

/// Nominal levels, empirical coverage per level, and their mean absolute
/// gap.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCurve {
    pub levels: Vec<f64>,
    pub empirical: Vec<f64>,
    pub mce: f64,
}

/// The default nominal grid 0.05, 0.10, ..., 0.95.
pub fn default_levels() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// Pooled empirical coverage over (window, step) pairs: `forecasts` holds
/// one distribution per observation, in the same order as `observations`.
pub fn coverage_curve(
    forecasts: &[PredictiveDistribution],
    observations: &[f64],
    levels: &[f64],
) -> Result<CalibrationCurve, MetricError> {
    if observations.is_empty() {
        return Err(MetricError::Empty("coverage_curve"));
    }
    if forecasts.len() != observations.len() {
        return Err(MetricError::Domain(format!(
            "coverage length mismatch: {} forecasts vs {} observations",
            forecasts.len(),
            observations.len()
        )));
    }
    if levels.is_empty() {
        return Err(MetricError::Empty("coverage levels"));
    }
    if levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(MetricError::Domain(
            "coverage levels must lie strictly inside (0, 1)".into(),
        ));
    }
    let mut empirical = Vec::with_capacity(levels.len());
    for &level in levels {
        let inside = forecasts
            .iter()
            .zip(observations)
            .filter(|(f, &y)| f.contains(level, y))
            .count();
        empirical.push(inside as f64 / observations.len() as f64);
    }
    let mce = empirical
        .iter()
        .zip(levels)
        .map(|(e, l)| (e - l).abs())
        .sum::<f64>()
        / levels.len() as f64;
    Ok(CalibrationCurve {
        levels: levels.to_vec(),
        empirical,
        mce,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::StudentT;
    use autodiff::rng::SplitMix64;

    #[test]
    fn degenerate_always_covering_intervals() {
        // Distributions centered exactly on the truth: every interval
        // contains it, ECP = 1 at every level, MCE = mean(1 - level).
        let levels = default_levels();
        let obs = vec![100.0; 50];
        let forecasts: Vec<PredictiveDistribution> = obs
            .iter()
            .map(|&y| PredictiveDistribution::Gaussian {
                mean: y,
                variance: 1.0,
            })
            .collect();
        let curve = coverage_curve(&forecasts, &obs, &levels).unwrap();
        assert!(curve.empirical.iter().all(|&e| e == 1.0));
        let want = levels.iter().map(|l| 1.0 - l).sum::<f64>() / levels.len() as f64;
        assert!((curve.mce - want).abs() < 1e-12);
    }

    #[test]
    fn self_consistent_samples_are_calibrated() {
        // Draw observations from the forecast distributions themselves;
        // ECP tracks NCP within Monte Carlo noise.
        let mut rng = SplitMix64::new(88);
        let n = 100_000;
        let mut forecasts = Vec::with_capacity(n);
        let mut obs = Vec::with_capacity(n);
        for _ in 0..n {
            let mean = rng.uniform(80.0, 160.0);
            let sd = rng.uniform(3.0, 20.0);
            forecasts.push(PredictiveDistribution::Gaussian {
                mean,
                variance: sd * sd,
            });
            obs.push(mean + sd * rng.normal());
        }
        let curve = coverage_curve(&forecasts, &obs, &default_levels()).unwrap();
        for (e, l) in curve.empirical.iter().zip(&curve.levels) {
            assert!((e - l).abs() <= 0.01, "level {l}: ecp {e}");
        }
        assert!(curve.mce <= 0.01);
    }

    #[test]
    fn mce_bounds_and_zero_condition() {
        let t = StudentT::new(0.0, 1.0, 5.0);
        let forecasts = vec![PredictiveDistribution::StudentT(t); 10];
        let obs = vec![0.0; 10];
        let curve = coverage_curve(&forecasts, &obs, &default_levels()).unwrap();
        assert!(curve.mce >= 0.0 && curve.mce <= 1.0);
        // observations at the median are inside every central interval
        assert!(curve.empirical.iter().all(|&e| e == 1.0));
    }

    #[test]
    fn input_validation() {
        let d = || [PredictiveDistribution::Point(1.0)];
        assert!(coverage_curve(&d(), &[], &default_levels()).is_err());
        assert!(coverage_curve(&d(), &[1.0], &[]).is_err());
        assert!(coverage_curve(&d(), &[1.0], &[1.0]).is_err());
    }
}
