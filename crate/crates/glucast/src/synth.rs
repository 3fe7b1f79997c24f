//! Synthetic CGM-style series with a known heteroscedastic generating
//! process, used by the desk-scale benchmarks and as demo data when no
//! clinical dataset is mounted.
//!
//! Glucose follows smooth daily/meal oscillations plus Gaussian noise
//! whose standard deviation is itself a slow oscillation. The noise
//! scale is exposed through the bolus channel, so a model can in
//! principle learn the aleatoric width exactly; the carb and heart-rate
//! channels carry the mean drivers.

use autodiff::rng::SplitMix64;

use crate::data::{FeatureSet, GlucoseSeries, STEP_SECONDS};
use crate::error::DataError;

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub len: usize,
    pub seed: u64,
    /// Baseline glucose, mg/dL.
    pub base: f64,
    /// Amplitude of the slow (daily) oscillation, mg/dL.
    pub daily_amp: f64,
    /// Amplitude of the fast (meal) oscillation, mg/dL.
    pub meal_amp: f64,
    /// Minimum noise standard deviation, mg/dL.
    pub noise_floor: f64,
    /// Peak-to-floor range of the noise standard deviation, mg/dL.
    pub noise_range: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            len: 2_000,
            seed: 7,
            base: 130.0,
            daily_amp: 35.0,
            meal_amp: 20.0,
            noise_floor: 4.0,
            noise_range: 14.0,
        }
    }
}

impl SynthSpec {
    /// Conditional mean of glucose at sample index t.
    pub fn mean_at(&self, t: usize) -> f64 {
        let t = t as f64;
        self.base
            + self.daily_amp * (2.0 * std::f64::consts::PI * t / 288.0).sin()
            + self.meal_amp * (2.0 * std::f64::consts::PI * t / 77.0 + 0.9).sin()
    }

    /// Noise standard deviation at sample index t.
    pub fn noise_std_at(&self, t: usize) -> f64 {
        let t = t as f64;
        self.noise_floor
            + self.noise_range * 0.5 * (1.0 + (2.0 * std::f64::consts::PI * t / 173.0 + 2.1).sin())
    }
}

/// Generate one patient's series under the spec.
pub fn generate_series(patient_id: &str, spec: &SynthSpec) -> Result<GlucoseSeries, DataError> {
    let mut rng = SplitMix64::new(spec.seed);
    let n = spec.len;
    let timestamps: Vec<i64> = (0..n as i64).map(|i| 1_700_000_000 + i * STEP_SECONDS).collect();
    let mut glucose = Vec::with_capacity(n);
    let mut bolus = Vec::with_capacity(n);
    let mut carbs = Vec::with_capacity(n);
    let mut heart = Vec::with_capacity(n);
    for t in 0..n {
        let mean = spec.mean_at(t);
        let sd = spec.noise_std_at(t);
        let g = (mean + sd * rng.normal()).max(40.0);
        glucose.push(g);
        // the volatility driver, directly observable
        bolus.push(sd + 0.02 * rng.normal());
        // mean drivers with a little measurement noise
        carbs.push(
            30.0 + 25.0 * (2.0 * std::f64::consts::PI * t as f64 / 77.0 + 0.9).sin()
                + 0.1 * rng.normal(),
        );
        heart.push(
            70.0 + 12.0 * (2.0 * std::f64::consts::PI * t as f64 / 288.0).sin()
                + 0.5 * rng.normal(),
        );
    }
    GlucoseSeries::new(
        patient_id.to_string(),
        timestamps,
        [glucose, bolus, carbs, heart],
        FeatureSet::HeartRate,
    )
}

/// A short linear-trend series for learning-curve checks.
pub fn linear_trend_series(len: usize, seed: u64) -> Result<GlucoseSeries, DataError> {
    let mut rng = SplitMix64::new(seed);
    let timestamps: Vec<i64> = (0..len as i64).map(|i| 1_700_000_000 + i * STEP_SECONDS).collect();
    let glucose: Vec<f64> = (0..len)
        .map(|t| 80.0 + 0.5 * t as f64 + 0.3 * rng.normal())
        .collect();
    let bolus: Vec<f64> = (0..len).map(|t| 1.0 + 0.1 * (t % 5) as f64).collect();
    let carbs: Vec<f64> = (0..len).map(|t| 10.0 + (t % 9) as f64).collect();
    let heart: Vec<f64> = (0..len).map(|_| 70.0 + rng.normal()).collect();
    GlucoseSeries::new(
        "trend".to_string(),
        timestamps,
        [glucose, bolus, carbs, heart],
        FeatureSet::HeartRate,
    )
}

/// Write a series as a HUPA-style CSV.
pub fn write_csv(series: &GlucoseSeries, path: &std::path::Path) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "time,glucose,bolus_volume_delivered,carb_input,heart_rate,steps,calories,basal_rate"
    )?;
    for i in 0..series.len() {
        // the non-selected feature columns carry simple stand-ins so the
        // file loads under any feature-set choice
        writeln!(
            f,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            series.timestamps()[i],
            series.channel(0)[i],
            series.channel(1)[i],
            series.channel(2)[i],
            series.channel(3)[i],
            (i % 50) as f64 + 1.0,
            2.0 + (i % 13) as f64 * 0.3,
            0.5 + (i % 7) as f64 * 0.1,
        )?;
    }
    f.flush()
}
