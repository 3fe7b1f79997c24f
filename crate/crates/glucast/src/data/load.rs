//! CSV schema adapter for HUPA-UCM-style per-patient files.

use std::path::Path;

use chrono::NaiveDateTime;

use super::{FeatureSet, GlucoseSeries, NUM_CHANNELS};
use crate::error::DataError;

/// Maps channel roles to CSV column names. Defaults follow the HUPA-UCM
/// preprocessed layout.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ColumnMap {
    pub time: String,
    pub glucose: String,
    pub bolus: String,
    pub carbs: String,
    pub heart_rate: String,
    pub steps: String,
    pub calories: String,
    pub basal: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            time: "time".into(),
            glucose: "glucose".into(),
            bolus: "bolus_volume_delivered".into(),
            carbs: "carb_input".into(),
            heart_rate: "heart_rate".into(),
            steps: "steps".into(),
            calories: "calories".into(),
            basal: "basal_rate".into(),
        }
    }
}

impl ColumnMap {
    fn feature_column(&self, feature: FeatureSet) -> &str {
        match feature {
            FeatureSet::HeartRate => &self.heart_rate,
            FeatureSet::Steps => &self.steps,
            FeatureSet::Calories => &self.calories,
            FeatureSet::Basal => &self.basal,
        }
    }

    /// Override one role by key name, as used in config files.
    pub fn set(&mut self, role: &str, column: &str) -> bool {
        let slot = match role {
            "time" => &mut self.time,
            "glucose" => &mut self.glucose,
            "bolus" => &mut self.bolus,
            "carbs" => &mut self.carbs,
            "heart_rate" => &mut self.heart_rate,
            "steps" => &mut self.steps,
            "calories" => &mut self.calories,
            "basal" => &mut self.basal,
        _ => return false,
        };
        *slot = column.to_string();
        true
    }
}

fn parse_timestamp(raw: &str, row: usize) -> Result<i64, DataError> {
    let raw = raw.trim();
    if let Ok(epoch) = raw.parse::<i64>() {
        return Ok(epoch);
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(DataError::BadTimestamp {
        value: raw.to_string(),
        row,
    })
}

/// Load one patient CSV. The patient id is the file stem. Rows must be
/// time-ordered at a uniform 5-minute step; non-finite values are
/// rejected rather than imputed.
pub fn load_cgm_csv(
    path: &Path,
    map: &ColumnMap,
    feature: FeatureSet,
) -> Result<GlucoseSeries, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => DataError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => DataError::Csv(e),
        })?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let time_idx = col(&map.time)?;
    let wanted = [
        (map.glucose.as_str(), col(&map.glucose)?),
        (map.bolus.as_str(), col(&map.bolus)?),
        (map.carbs.as_str(), col(&map.carbs)?),
        (
            map.feature_column(feature),
            col(map.feature_column(feature))?,
        ),
    ];

    let mut timestamps = Vec::new();
    let mut channels: [Vec<f64>; NUM_CHANNELS] = Default::default();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        timestamps.push(parse_timestamp(&record[time_idx], row)?);
        for (c, (name, idx)) in wanted.iter().enumerate() {
            let raw = &record[*idx];
            let v: f64 = raw.parse().map_err(|_| DataError::Unparseable {
                column: name.to_string(),
                row,
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite {
                    column: name.to_string(),
                    row,
                });
            }
            channels[c].push(v);
        }
    }
    let patient_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "unknown".to_string());
    GlucoseSeries::new(patient_id, timestamps, channels, feature)
}
