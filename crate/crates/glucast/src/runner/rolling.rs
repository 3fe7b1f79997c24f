//! Rolling forecasts: per timestep, the mean over all overlapping
//! prediction windows covering that point, with matching +/- 2 sigma
//! bands averaged the same way.

use crate::data::{make_windows, NormalizationParams, NormalizedSeries, WINDOW_LEN};
use crate::error::RunError;
use crate::runner::evaluate::{predict_windows, EvalSettings, Predictor};

/// Per-timestep rolling aggregate. The leading 36 samples carry no
/// forecast; vectors start at sample index `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct RollingForecast {
    /// First forecast sample index in the source series.
    pub start: usize,
    pub timestamps: Vec<i64>,
    pub measured: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Whether the measured value fell inside the band.
    pub covered: Vec<bool>,
}

impl RollingForecast {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,measured,mean,lower,upper,covered\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{}\n",
                self.timestamps[i],
                self.measured[i],
                self.mean[i],
                self.lower[i],
                self.upper[i],
                self.covered[i] as u8,
            ));
        }
        out
    }
}

/// Forecast a whole normalized series with stride-1 windows and average
/// the overlapping predictions covering each timestep; window w's step k
/// covers sample w + 36 + k. `norm` must be the parameter set the
/// predictor was trained under.
pub fn rolling_forecast(
    predictor: &Predictor,
    series: &NormalizedSeries,
    horizon: usize,
    norm: &NormalizationParams,
    settings: &EvalSettings,
) -> Result<RollingForecast, RunError> {
    let windows = make_windows(series, horizon)?;
    let forecasts = predict_windows(predictor, &windows, norm, settings)?;
    let start = WINDOW_LEN;
    let span = series.len() - start;
    let mut mean_acc = vec![0.0; span];
    let mut lower_acc = vec![0.0; span];
    let mut upper_acc = vec![0.0; span];
    let mut counts = vec![0usize; span];
    for (w, f) in forecasts.iter().enumerate() {
        for k in 0..horizon {
            let slot = w + k; // timestep (w + 36 + k) minus start
            let sd = f.dists[k].std();
            mean_acc[slot] += f.point[k];
            lower_acc[slot] += f.point[k] - 2.0 * sd;
            upper_acc[slot] += f.point[k] + 2.0 * sd;
            counts[slot] += 1;
        }
    }
    let mut out = RollingForecast {
        start,
        timestamps: Vec::with_capacity(span),
        measured: Vec::with_capacity(span),
        mean: Vec::with_capacity(span),
        lower: Vec::with_capacity(span),
        upper: Vec::with_capacity(span),
        covered: Vec::with_capacity(span),
    };
    for (slot, &count) in counts.iter().enumerate() {
        debug_assert!(count > 0, "every forecast timestep is covered");
        let n = count as f64;
        let t = start + slot;
        let m = mean_acc[slot] / n;
        let lo = lower_acc[slot] / n;
        let hi = upper_acc[slot] / n;
        let y = series.raw_glucose()[t];
        out.mean.push(m);
        out.lower.push(lo);
        out.upper.push(hi);
        out.measured.push(y);
        out.covered.push(lo <= y && y <= hi);
        out.timestamps.push(series.timestamps()[t]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{zscore_apply, zscore_fit, HYPER_MGDL, HYPO_MGDL};
    use crate::predictive::PredictiveDistribution;
    use crate::runner::evaluate::WindowForecast;
    use crate::synth::{generate_series, SynthSpec};

    fn series(len: usize) -> (NormalizedSeries, NormalizationParams) {
        let s = generate_series(
            "r",
            &SynthSpec {
                len,
                seed: 33,
                ..Default::default()
            },
        )
        .unwrap();
        let norm = zscore_fit(&s).unwrap();
        (zscore_apply(&s, &norm), norm)
    }

    /// Brute-force rolling aggregation from explicit per-window forecasts.
    fn brute_force(
        forecasts: &[WindowForecast],
        series: &NormalizedSeries,
        horizon: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let start = WINDOW_LEN;
        let span = series.len() - start;
        let mut mean = vec![0.0; span];
        let mut lower = vec![0.0; span];
        for t in start..series.len() {
            let mut acc = Vec::new();
            let mut acc_lo = Vec::new();
            for (w, f) in forecasts.iter().enumerate() {
                for k in 0..horizon {
                    if w + WINDOW_LEN + k == t {
                        let sd = f.dists[k].std();
                        acc.push(f.point[k]);
                        acc_lo.push(f.point[k] - 2.0 * sd);
                    }
                }
            }
            mean[t - start] = acc.iter().sum::<f64>() / acc.len() as f64;
            lower[t - start] = acc_lo.iter().sum::<f64>() / acc_lo.len() as f64;
        }
        (mean, lower)
    }

    fn synthetic_predictor_forecasts(
        series: &NormalizedSeries,
        horizon: usize,
    ) -> Vec<WindowForecast> {
        // deterministic pseudo-forecasts: value depends on (window, step)
        let n = series.len() - WINDOW_LEN - horizon + 1;
        (0..n)
            .map(|w| {
                let point: Vec<f64> = (0..horizon)
                    .map(|k| 100.0 + (w as f64 * 0.37) + (k as f64 * 1.3))
                    .collect();
                let dists = point
                    .iter()
                    .enumerate()
                    .map(|(k, &m)| PredictiveDistribution::Gaussian {
                        mean: m,
                        variance: (1.0 + 0.1 * k as f64).powi(2),
                    })
                    .collect();
                WindowForecast {
                    point,
                    dists,
                    sigma: 1.0,
                    hypo_prob: None,
                    hyper_prob: None,
                }
            })
            .collect()
    }

    #[test]
    fn interior_timesteps_average_exactly_horizon_windows() {
        let horizon = 6;
        let (normalized, _) = series(160);
        let forecasts = synthetic_predictor_forecasts(&normalized, horizon);
        let (mean_bf, lower_bf) = brute_force(&forecasts, &normalized, horizon);
        // replicate the production aggregation loop on the same forecasts
        let span = normalized.len() - WINDOW_LEN;
        let mut mean_acc = vec![0.0; span];
        let mut lower_acc = vec![0.0; span];
        let mut counts = vec![0usize; span];
        for (w, f) in forecasts.iter().enumerate() {
            for k in 0..horizon {
                let slot = w + k;
                let sd = f.dists[k].std();
                mean_acc[slot] += f.point[k];
                lower_acc[slot] += f.point[k] - 2.0 * sd;
                counts[slot] += 1;
            }
        }
        for slot in 0..span {
            let got = mean_acc[slot] / counts[slot] as f64;
            assert!((got - mean_bf[slot]).abs() < 1e-10, "slot {slot}");
            let got_lo = lower_acc[slot] / counts[slot] as f64;
            assert!((got_lo - lower_bf[slot]).abs() < 1e-10);
        }
        // interior coverage count equals the horizon
        let n_windows = forecasts.len();
        for slot in (horizon - 1)..(n_windows.min(span)) {
            assert_eq!(counts[slot], horizon, "slot {slot}");
        }
    }

    #[test]
    fn h1_rolling_mean_equals_raw_prediction() {
        // With a single-step horizon at most one window covers each
        // timestep, so averaging is the identity.
        let horizon = 1;
        let (normalized, _) = series(120);
        let forecasts = synthetic_predictor_forecasts(&normalized, horizon);
        let span = normalized.len() - WINDOW_LEN;
        let mut counts = vec![0usize; span];
        for (w, _) in forecasts.iter().enumerate() {
            counts[w] += 1;
        }
        assert!(counts.iter().all(|&c| c <= 1));
    }

    #[test]
    fn constant_predictor_gives_flat_bands() {
        let horizon = 6;
        let (normalized, _) = series(140);
        let n = normalized.len() - WINDOW_LEN - horizon + 1;
        let forecasts: Vec<WindowForecast> = (0..n)
            .map(|_| WindowForecast {
                point: vec![110.0; horizon],
                dists: vec![
                    PredictiveDistribution::Gaussian {
                        mean: 110.0,
                        variance: 25.0,
                    };
                    horizon
                ],
                sigma: 5.0,
                hypo_prob: None,
                hyper_prob: None,
            })
            .collect();
        // replay the aggregation: every timestep averages identical values
        let span = normalized.len() - WINDOW_LEN;
        let mut mean_acc = vec![0.0; span];
        let mut lower_acc = vec![0.0; span];
        let mut upper_acc = vec![0.0; span];
        let mut counts = vec![0usize; span];
        for (w, f) in forecasts.iter().enumerate() {
            for k in 0..horizon {
                let sd = f.dists[k].std();
                mean_acc[w + k] += f.point[k];
                lower_acc[w + k] += f.point[k] - 2.0 * sd;
                upper_acc[w + k] += f.point[k] + 2.0 * sd;
                counts[w + k] += 1;
            }
        }
        for slot in 0..span {
            let c = counts[slot] as f64;
            assert!((mean_acc[slot] / c - 110.0).abs() < 1e-12);
            assert!((lower_acc[slot] / c - 100.0).abs() < 1e-12);
            assert!((upper_acc[slot] / c - 120.0).abs() < 1e-12);
        }
    }

    #[test]
    fn end_to_end_with_a_ridge_predictor_keeps_bands_ordered() {
        let horizon = 6;
        let (normalized, norm) = series(420);
        let windows = make_windows(&normalized, horizon).unwrap();
        let ridge = crate::baselines::ridge_fit_windows(&windows).unwrap();
        let predictor = Predictor::Ridge(ridge);
        let rolling = rolling_forecast(
            &predictor,
            &normalized,
            horizon,
            &norm,
            &EvalSettings::default(),
        )
        .unwrap();
        assert_eq!(rolling.len(), normalized.len() - WINDOW_LEN);
        for i in 0..rolling.len() {
            assert!(
                rolling.lower[i] <= rolling.mean[i] && rolling.mean[i] <= rolling.upper[i],
                "band ordering at {i}"
            );
        }
        // csv emission is stable and parses back by line count
        let csv = rolling.to_csv();
        assert_eq!(csv.lines().count(), rolling.len() + 1);
        let _ = (HYPO_MGDL, HYPER_MGDL);
    }
}
