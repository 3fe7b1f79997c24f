//! CGM-style time series: ingestion, z-scoring, windowing, chronological
//! splitting, and adverse-event labeling.

mod load;

pub use load::{load_cgm_csv, ColumnMap};

use crate::error::DataError;

/// Samples per input window: 3 hours at 5-minute sampling.
pub const WINDOW_LEN: usize = 36;
/// Number of input channels.
pub const NUM_CHANNELS: usize = 4;
/// Sampling interval in seconds.
pub const STEP_SECONDS: i64 = 300;
/// Hypoglycemia threshold, mg/dL (event when glucose goes below).
pub const HYPO_MGDL: f64 = 70.0;
/// Hyperglycemia threshold, mg/dL (event when glucose goes above).
pub const HYPER_MGDL: f64 = 180.0;

/// The fourth input channel accompanying glucose, bolus, and carbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FeatureSet {
    HeartRate,
    Steps,
    Calories,
    Basal,
}

impl FeatureSet {
    pub fn all() -> [FeatureSet; 4] {
        [
            FeatureSet::HeartRate,
            FeatureSet::Steps,
            FeatureSet::Calories,
            FeatureSet::Basal,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            FeatureSet::HeartRate => "heart_rate",
            FeatureSet::Steps => "steps",
            FeatureSet::Calories => "calories",
            FeatureSet::Basal => "basal",
        }
    }

    pub fn parse(s: &str) -> Option<FeatureSet> {
        match s {
            "heart_rate" => Some(FeatureSet::HeartRate),
            "steps" => Some(FeatureSet::Steps),
            "calories" => Some(FeatureSet::Calories),
            "basal" => Some(FeatureSet::Basal),
            _ => None,
        }
    }
}

/// One patient's multivariate series at fixed 5-minute spacing.
/// Channel order is glucose, bolus, carbs, then the chosen fourth feature.
#[derive(Debug, Clone)]
pub struct GlucoseSeries {
    patient_id: String,
    timestamps: Vec<i64>,
    channels: [Vec<f64>; NUM_CHANNELS],
    feature: FeatureSet,
}

impl GlucoseSeries {
    pub fn new(
        patient_id: String,
        timestamps: Vec<i64>,
        channels: [Vec<f64>; NUM_CHANNELS],
        feature: FeatureSet,
    ) -> Result<Self, DataError> {
        let len = timestamps.len();
        for ch in &channels {
            if ch.len() != len {
                return Err(DataError::TooShort {
                    len: ch.len(),
                    need: len,
                });
            }
        }
        for (i, pair) in timestamps.windows(2).enumerate() {
            let step = pair[1] - pair[0];
            if step != STEP_SECONDS {
                return Err(DataError::NonUniformStep {
                    index: i,
                    expected: STEP_SECONDS,
                    got: step,
                });
            }
        }
        for (name, ch) in Self::channel_names(feature).iter().zip(&channels) {
            if let Some(row) = ch.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFinite {
                    column: name.to_string(),
                    row,
                });
            }
        }
        if let Some(row) = channels[0].iter().position(|&g| g <= 0.0) {
            return Err(DataError::NonPositiveGlucose {
                value: channels[0][row],
                row,
            });
        }
        Ok(Self {
            patient_id,
            timestamps,
            channels,
            feature,
        })
    }

    fn channel_names(feature: FeatureSet) -> [&'static str; NUM_CHANNELS] {
        ["glucose", "bolus", "carbs", feature.name()]
    }

    pub fn names(&self) -> [&'static str; NUM_CHANNELS] {
        Self::channel_names(self.feature)
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn feature(&self) -> FeatureSet {
        self.feature
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    pub fn glucose(&self) -> &[f64] {
        &self.channels[0]
    }

    fn slice(&self, range: std::ops::Range<usize>) -> GlucoseSeries {
        GlucoseSeries {
            patient_id: self.patient_id.clone(),
            timestamps: self.timestamps[range.clone()].to_vec(),
            channels: [
                self.channels[0][range.clone()].to_vec(),
                self.channels[1][range.clone()].to_vec(),
                self.channels[2][range.clone()].to_vec(),
                self.channels[3][range].to_vec(),
            ],
            feature: self.feature,
        }
    }
}

/// Contiguous 60/20/20 split in time order: lengths floor(0.6 L),
/// floor(0.2 L), and the remainder. Concatenation reconstructs the input.
pub fn chronological_split(
    series: &GlucoseSeries,
) -> Result<(GlucoseSeries, GlucoseSeries, GlucoseSeries), DataError> {
    let len = series.len();
    let n_train = (0.6 * len as f64).floor() as usize;
    let n_val = (0.2 * len as f64).floor() as usize;
    let n_test = len - n_train - n_val;
    if len < 5 || n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(DataError::TooShort { len, need: 5 });
    }
    Ok((
        series.slice(0..n_train),
        series.slice(n_train..n_train + n_val),
        series.slice(n_train + n_val..len),
    ))
}

/// Per-channel mean and sample (n-1) standard deviation, fitted on a
/// training partition only.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormalizationParams {
    pub mean: [f64; NUM_CHANNELS],
    pub std: [f64; NUM_CHANNELS],
}

impl NormalizationParams {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; NUM_CHANNELS],
            std: [1.0; NUM_CHANNELS],
        }
    }

    pub fn glucose_mean(&self) -> f64 {
        self.mean[0]
    }

    pub fn glucose_std(&self) -> f64 {
        self.std[0]
    }

    /// Map a normalized glucose value back to mg/dL.
    pub fn denorm_glucose(&self, v: f64) -> f64 {
        v * self.std[0] + self.mean[0]
    }

    pub fn norm_glucose(&self, mgdl: f64) -> f64 {
        (mgdl - self.mean[0]) / self.std[0]
    }
}

pub fn zscore_fit(train: &GlucoseSeries) -> Result<NormalizationParams, DataError> {
    let n = train.len();
    if n < 2 {
        return Err(DataError::TooShort { len: n, need: 2 });
    }
    let mut mean = [0.0; NUM_CHANNELS];
    let mut std = [0.0; NUM_CHANNELS];
    for (c, name) in train.names().iter().enumerate() {
        let data = train.channel(c);
        let m = data.iter().sum::<f64>() / n as f64;
        let var = data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n as f64 - 1.0);
        let s = var.sqrt();
        if s <= 0.0 {
            return Err(DataError::DegenerateChannel(name.to_string()));
        }
        mean[c] = m;
        std[c] = s;
    }
    Ok(NormalizationParams { mean, std })
}

/// A z-scored series. Keeps the raw glucose column alongside so windowing
/// can draw targets in original mg/dL units.
#[derive(Debug, Clone)]
pub struct NormalizedSeries {
    patient_id: String,
    timestamps: Vec<i64>,
    channels: [Vec<f64>; NUM_CHANNELS],
    raw_glucose: Vec<f64>,
}

impl NormalizedSeries {
    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn channel(&self, idx: usize) -> &[f64] {
        &self.channels[idx]
    }

    pub fn raw_glucose(&self) -> &[f64] {
        &self.raw_glucose
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }
}

pub fn zscore_apply(series: &GlucoseSeries, params: &NormalizationParams) -> NormalizedSeries {
    let mut channels: [Vec<f64>; NUM_CHANNELS] = Default::default();
    for c in 0..NUM_CHANNELS {
        channels[c] = series
            .channel(c)
            .iter()
            .map(|v| (v - params.mean[c]) / params.std[c])
            .collect();
    }
    NormalizedSeries {
        patient_id: series.patient_id.clone(),
        timestamps: series.timestamps.clone(),
        channels,
        raw_glucose: series.glucose().to_vec(),
    }
}

/// Invert [`zscore_apply`] on one channel.
pub fn denormalize_channel(values: &[f64], params: &NormalizationParams, channel: usize) -> Vec<f64> {
    values
        .iter()
        .map(|v| v * params.std[channel] + params.mean[channel])
        .collect()
}

/// Input windows of shape (N, 36, 4) in normalized units paired with
/// h-step glucose targets in mg/dL. Immutable once built.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    patient_id: String,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    origins: Vec<i64>,
    horizon: usize,
    n: usize,
}

impl WindowedDataset {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    /// Flattened (36 x 4) window, time-major.
    pub fn input(&self, i: usize) -> &[f64] {
        let w = WINDOW_LEN * NUM_CHANNELS;
        &self.inputs[i * w..(i + 1) * w]
    }

    /// Target glucose steps in mg/dL.
    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.horizon..(i + 1) * self.horizon]
    }

    /// Timestamp of the forecast origin (last input sample) of window i.
    pub fn origin(&self, i: usize) -> i64 {
        self.origins[i]
    }

    pub fn inputs_flat(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets_flat(&self) -> &[f64] {
        &self.targets
    }

    /// Gather a batch of windows into one (B, 36, 4) buffer and the
    /// matching (B, h) target buffer.
    pub fn batch(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let w = WINDOW_LEN * NUM_CHANNELS;
        let mut inputs = Vec::with_capacity(idx.len() * w);
        let mut targets = Vec::with_capacity(idx.len() * self.horizon);
        for &i in idx {
            inputs.extend_from_slice(self.input(i));
            targets.extend_from_slice(self.target(i));
        }
        (inputs, targets)
    }

    /// Population-level pool: plain concatenation of per-patient window
    /// sets. Horizons must match; windows never cross patients.
    pub fn concat(sets: &[WindowedDataset]) -> Result<WindowedDataset, DataError> {
        let first = sets.first().ok_or(DataError::TooShort { len: 0, need: 1 })?;
        let horizon = first.horizon;
        let mut out = WindowedDataset {
            patient_id: "pooled".to_string(),
            inputs: Vec::new(),
            targets: Vec::new(),
            origins: Vec::new(),
            horizon,
            n: 0,
        };
        for s in sets {
            assert_eq!(s.horizon, horizon, "mixed horizons in pool");
            out.inputs.extend_from_slice(&s.inputs);
            out.targets.extend_from_slice(&s.targets);
            out.origins.extend_from_slice(&s.origins);
            out.n += s.n;
        }
        Ok(out)
    }
}

/// Stride-1 sliding windows: N = L - 36 - h + 1. Each target begins at the
/// sample immediately after its window.
pub fn make_windows(series: &NormalizedSeries, horizon: usize) -> Result<WindowedDataset, DataError> {
    let len = series.len();
    let need = WINDOW_LEN + horizon;
    if len < need {
        return Err(DataError::TooShort { len, need });
    }
    let n = len - need + 1;
    let mut inputs = Vec::with_capacity(n * WINDOW_LEN * NUM_CHANNELS);
    let mut targets = Vec::with_capacity(n * horizon);
    let mut origins = Vec::with_capacity(n);
    for start in 0..n {
        for t in start..start + WINDOW_LEN {
            for c in 0..NUM_CHANNELS {
                inputs.push(series.channels[c][t]);
            }
        }
        let t0 = start + WINDOW_LEN;
        targets.extend_from_slice(&series.raw_glucose[t0..t0 + horizon]);
        origins.push(series.timestamps[start + WINDOW_LEN - 1]);
    }
    Ok(WindowedDataset {
        patient_id: series.patient_id.clone(),
        inputs,
        targets,
        origins,
        horizon,
        n,
    })
}

/// Per-window adverse-event flags computed from raw mg/dL targets.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLabels {
    pub hypo: Vec<bool>,
    pub hyper: Vec<bool>,
}

pub fn label_events(dataset: &WindowedDataset) -> EventLabels {
    let mut hypo = Vec::with_capacity(dataset.n());
    let mut hyper = Vec::with_capacity(dataset.n());
    for i in 0..dataset.n() {
        let t = dataset.target(i);
        hypo.push(t.iter().any(|&g| g < HYPO_MGDL));
        hyper.push(t.iter().any(|&g| g > HYPER_MGDL));
    }
    EventLabels { hypo, hyper }
}
