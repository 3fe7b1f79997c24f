//! Experiment orchestration: config parsing, the data pipeline, training
//! and evaluation over model x head cells, rolling forecasts, and file
//! emission.

mod analysis;
mod emit;
mod evaluate;
mod rolling;
mod train;

pub use analysis::{per_patient_analysis, AnalysisResult};
pub use emit::{emit_cell_outputs, emit_combined_report, emit_matrix, matrix_csv, CellOutputs};
pub use evaluate::{evaluate, interval_rule_sensitivities, EvalArtifacts, EvalSettings, Predictor, WindowForecast};
pub use rolling::{rolling_forecast, RollingForecast};
pub use train::{batch_tensors, evaluate_loss, train, EpochStats, TrainLog, TrainOptions};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::{
    chronological_split, label_events, load_cgm_csv, make_windows, zscore_apply, zscore_fit,
    ColumnMap, EventLabels, FeatureSet, GlucoseSeries, NormalizationParams, WindowedDataset,
    NUM_CHANNELS,
};
use crate::error::RunError;
use crate::evidential::{EventAggregation, RegularizerKind};
use crate::models::{Architecture, HeadKind};

/// Full experiment configuration, parsed from a plain-text key = value
/// file. Unset keys fall back to the training recipe defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub feature_set: FeatureSet,
    pub horizon: usize,
    pub architectures: Vec<Architecture>,
    pub heads: Vec<HeadKind>,
    pub include_ridge: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub micro_batch: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub mc_samples: usize,
    pub dropout_rate: f64,
    pub kl_coefficient: f64,
    /// Reference prior scale in mg/dL; None selects the maximum training
    /// glucose.
    pub beta_r_mgdl: Option<f64>,
    pub grid: String,
    pub event_aggregation: EventAggregation,
    /// Which regularizer accompanies the evidential data loss.
    pub regularizer: RegularizerKind,
    pub columns: ColumnMap,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("out"),
            feature_set: FeatureSet::HeartRate,
            horizon: 6,
            architectures: Architecture::all().to_vec(),
            heads: HeadKind::all().to_vec(),
            include_ridge: true,
            epochs: 300,
            batch_size: 1024,
            micro_batch: 128,
            learning_rate: 1e-4,
            seed: 42,
            mc_samples: 100,
            dropout_rate: 0.2,
            kl_coefficient: 0.01,
            beta_r_mgdl: None,
            grid: "clarke".to_string(),
            event_aggregation: EventAggregation::MaxStep,
            regularizer: RegularizerKind::KlReference,
            columns: ColumnMap::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, RunError> {
        let mut config = Self::default();
        let bad = |lineno: usize, what: &str| RunError::Config(format!("line {lineno}: {what}"));
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(lineno, "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "data_dir" => config.data_dir = PathBuf::from(value),
                "output_dir" => config.output_dir = PathBuf::from(value),
                "feature_set" => {
                    config.feature_set = FeatureSet::parse(value)
                        .ok_or_else(|| bad(lineno, &format!("unknown feature set `{value}`")))?;
                }
                "horizon" => {
                    config.horizon = value
                        .parse()
                        .map_err(|_| bad(lineno, &format!("bad horizon `{value}`")))?;
                }
                "models" | "architectures" => {
                    config.architectures = value
                        .split(',')
                        .map(str::trim)
                        .filter(|v| !v.is_empty())
                        .map(|v| {
                            Architecture::parse(v).ok_or_else(|| {
                                bad(lineno, &format!("unknown architecture `{v}`"))
                            })
                        })
                        .collect::<Result<_, _>>()?;
                }
                "heads" => {
                    config.heads = value
                        .split(',')
                        .map(str::trim)
                        .filter(|v| !v.is_empty())
                        .map(|v| {
                            HeadKind::parse(v)
                                .ok_or_else(|| bad(lineno, &format!("unknown head `{v}`")))
                        })
                        .collect::<Result<_, _>>()?;
                }
                "include_ridge" => {
                    config.include_ridge = value
                        .parse()
                        .map_err(|_| bad(lineno, "include_ridge must be true/false"))?;
                }
                "epochs" => config.epochs = value.parse().map_err(|_| bad(lineno, "bad epochs"))?,
                "batch_size" => {
                    config.batch_size = value.parse().map_err(|_| bad(lineno, "bad batch_size"))?;
                }
                "micro_batch" => {
                    config.micro_batch =
                        value.parse().map_err(|_| bad(lineno, "bad micro_batch"))?;
                }
                "learning_rate" => {
                    config.learning_rate =
                        value.parse().map_err(|_| bad(lineno, "bad learning_rate"))?;
                }
                "seed" => config.seed = value.parse().map_err(|_| bad(lineno, "bad seed"))?,
                "mc_samples" => {
                    config.mc_samples = value.parse().map_err(|_| bad(lineno, "bad mc_samples"))?;
                }
                "dropout_rate" => {
                    config.dropout_rate =
                        value.parse().map_err(|_| bad(lineno, "bad dropout_rate"))?;
                }
                "kl_coefficient" => {
                    config.kl_coefficient =
                        value.parse().map_err(|_| bad(lineno, "bad kl_coefficient"))?;
                }
                "beta_r" => {
                    config.beta_r_mgdl = if value.is_empty() {
                        None
                    } else {
                        Some(value.parse().map_err(|_| bad(lineno, "bad beta_r"))?)
                    };
                }
                "grid" => config.grid = value.to_string(),
                "event_aggregation" => {
                    config.event_aggregation = match value {
                        "max" => EventAggregation::MaxStep,
                        "complement" => EventAggregation::Complement,
                        other => {
                            return Err(bad(lineno, &format!("unknown aggregation `{other}`")))
                        }
                    };
                }
                "regularizer" => {
                    config.regularizer = match value {
                        "kl" => RegularizerKind::KlReference,
                        "evidence" => RegularizerKind::EvidencePenalty,
                        other => {
                            return Err(bad(lineno, &format!("unknown regularizer `{other}`")))
                        }
                    };
                }
                _ if key.starts_with("column.") => {
                    let role = &key["column.".len()..];
                    if !config.columns.set(role, value) {
                        return Err(bad(lineno, &format!("unknown column role `{role}`")));
                    }
                }
                other => return Err(bad(lineno, &format!("unknown key `{other}`"))),
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.horizon != 6 && self.horizon != 12 {
            return Err(RunError::Config(format!(
                "horizon must be 6 or 12, got {}",
                self.horizon
            )));
        }
        if self.batch_size == 0 || self.micro_batch == 0 {
            return Err(RunError::Config("batch sizes must be positive".into()));
        }
        if self.architectures.is_empty() && !self.include_ridge {
            return Err(RunError::Config("no cells selected".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(RunError::Config("learning rate must be positive".into()));
        }
        if let Some(b) = self.beta_r_mgdl {
            if b.is_nan() || b <= 0.0 {
                return Err(RunError::Config(format!("beta_r must be positive: {b}")));
            }
        }
        Ok(())
    }

    /// The neural (architecture, head) cells this config selects.
    pub fn cells(&self) -> Vec<(Architecture, HeadKind)> {
        let mut out = Vec::new();
        for &arch in &self.architectures {
            for &head in &self.heads {
                out.push((arch, head));
            }
        }
        out
    }
}

/// One patient's windowed partitions.
#[derive(Debug, Clone)]
pub struct PatientData {
    pub id: String,
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
    pub test_labels: EventLabels,
}

/// Everything the training and evaluation stages consume.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub norm: NormalizationParams,
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
    pub test_labels: EventLabels,
    /// Default KL reference scale: maximum training glucose in mg/dL.
    pub beta_r_mgdl: f64,
    pub patients: Vec<PatientData>,
}

/// Pool per-patient series into train/val/test window sets: split each
/// patient chronologically, fit z-score statistics on the pooled training
/// partitions only, window each partition independently, and concatenate
/// windows across patients.
pub fn prepare(series: &[GlucoseSeries], horizon: usize) -> Result<PreparedData, RunError> {
    if series.is_empty() {
        return Err(RunError::State("no patient series loaded".into()));
    }
    let mut splits = Vec::with_capacity(series.len());
    for s in series {
        splits.push(chronological_split(s)?);
    }
    // pooled z-score statistics from the training partitions
    let norm = fit_pooled(&splits.iter().map(|(t, _, _)| t.clone()).collect::<Vec<_>>())?;
    let beta_r_mgdl = splits
        .iter()
        .flat_map(|(t, _, _)| t.glucose().iter().copied())
        .fold(f64::MIN, f64::max);

    let mut train_sets = Vec::new();
    let mut val_sets = Vec::new();
    let mut test_sets = Vec::new();
    let mut patients = Vec::new();
    for (train, val, test) in &splits {
        let w_train = make_windows(&zscore_apply(train, &norm), horizon)?;
        let w_val = make_windows(&zscore_apply(val, &norm), horizon)?;
        let w_test = make_windows(&zscore_apply(test, &norm), horizon)?;
        let test_labels = label_events(&w_test);
        patients.push(PatientData {
            id: train.patient_id().to_string(),
            train: w_train.clone(),
            val: w_val.clone(),
            test: w_test.clone(),
            test_labels,
        });
        train_sets.push(w_train);
        val_sets.push(w_val);
        test_sets.push(w_test);
    }
    let train = WindowedDataset::concat(&train_sets)?;
    let val = WindowedDataset::concat(&val_sets)?;
    let test = WindowedDataset::concat(&test_sets)?;
    let test_labels = label_events(&test);
    Ok(PreparedData {
        norm,
        train,
        val,
        test,
        test_labels,
        beta_r_mgdl,
        patients,
    })
}

/// Pooled-sample mean and (n-1) standard deviation across all partitions.
fn fit_pooled(partitions: &[GlucoseSeries]) -> Result<NormalizationParams, RunError> {
    if partitions.len() == 1 {
        return Ok(zscore_fit(&partitions[0])?);
    }
    let total: usize = partitions.iter().map(|p| p.len()).sum();
    if total < 2 {
        return Err(RunError::State("pooled training partition too small".into()));
    }
    let mut mean = [0.0; NUM_CHANNELS];
    let mut std = [0.0; NUM_CHANNELS];
    for c in 0..NUM_CHANNELS {
        let mut m = 0.0;
        for p in partitions {
            m += p.channel(c).iter().sum::<f64>();
        }
        m /= total as f64;
        let mut var = 0.0;
        for p in partitions {
            var += p.channel(c).iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        }
        var /= total as f64 - 1.0;
        if var <= 0.0 {
            return Err(RunError::Data(crate::error::DataError::DegenerateChannel(
                partitions[0].names()[c].to_string(),
            )));
        }
        mean[c] = m;
        std[c] = var.sqrt();
    }
    Ok(NormalizationParams { mean, std })
}

/// Load every `*.csv` under the data directory, sorted by file name for
/// determinism.
pub fn load_patients(
    dir: &Path,
    columns: &ColumnMap,
    feature: FeatureSet,
) -> Result<Vec<GlucoseSeries>, RunError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| RunError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "csv").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(RunError::State(format!(
            "no csv files under {}",
            dir.display()
        )));
    }
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        out.push(load_cgm_csv(&p, columns, feature)?);
    }
    Ok(out)
}

/// Audit that no test window's origin precedes any training or
/// validation timestep of the same patient.
pub fn leakage_audit(prepared: &PreparedData) -> Result<(), RunError> {
    for patient in &prepared.patients {
        let tail_train = (0..patient.train.n())
            .map(|i| patient.train.origin(i))
            .max()
            .unwrap_or(i64::MIN);
        let tail_val = (0..patient.val.n())
            .map(|i| patient.val.origin(i))
            .max()
            .unwrap_or(i64::MIN);
        let boundary = tail_train.max(tail_val);
        for i in 0..patient.test.n() {
            if patient.test.origin(i) <= boundary {
                return Err(RunError::State(format!(
                    "temporal leakage for patient {}: test window {} at {} does not follow {}",
                    patient.id,
                    i,
                    patient.test.origin(i),
                    boundary
                )));
            }
        }
    }
    Ok(())
}

/// Serialize a model config and normalization sidecar as plain text.
pub fn sidecar_text(
    arch: Architecture,
    head: HeadKind,
    horizon: usize,
    dropout_rate: f64,
    seed: u64,
    norm: &NormalizationParams,
    beta_r_mgdl: f64,
) -> String {
    let mut kv = BTreeMap::new();
    kv.insert("architecture", arch.name().to_string());
    kv.insert("head", head.name().to_string());
    kv.insert("horizon", horizon.to_string());
    kv.insert("dropout_rate", format!("{dropout_rate:?}"));
    kv.insert("seed", seed.to_string());
    kv.insert("beta_r_mgdl", format!("{beta_r_mgdl:?}"));
    let mut out = String::new();
    for (k, v) in kv {
        out.push_str(&format!("{k} = {v}\n"));
    }
    for c in 0..NUM_CHANNELS {
        out.push_str(&format!("norm.mean.{c} = {:?}\n", norm.mean[c]));
        out.push_str(&format!("norm.std.{c} = {:?}\n", norm.std[c]));
    }
    out
}

/// Parsed checkpoint sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct Sidecar {
    pub architecture: Architecture,
    pub head: HeadKind,
    pub horizon: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub norm: NormalizationParams,
    pub beta_r_mgdl: f64,
}

pub fn parse_sidecar(text: &str) -> Result<Sidecar, RunError> {
    let mut kv = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| RunError::Config(format!("bad sidecar line `{line}`")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| -> Result<&String, RunError> {
        kv.get(k)
            .ok_or_else(|| RunError::Config(format!("sidecar missing `{k}`")))
    };
    let num = |k: &str| -> Result<f64, RunError> {
        get(k)?
            .parse()
            .map_err(|_| RunError::Config(format!("sidecar `{k}` is not a number")))
    };
    let mut mean = [0.0; NUM_CHANNELS];
    let mut std = [0.0; NUM_CHANNELS];
    for c in 0..NUM_CHANNELS {
        mean[c] = num(&format!("norm.mean.{c}"))?;
        std[c] = num(&format!("norm.std.{c}"))?;
    }
    Ok(Sidecar {
        architecture: Architecture::parse(get("architecture")?)
            .ok_or_else(|| RunError::Config("bad sidecar architecture".into()))?,
        head: HeadKind::parse(get("head")?)
            .ok_or_else(|| RunError::Config("bad sidecar head".into()))?,
        horizon: num("horizon")? as usize,
        dropout_rate: num("dropout_rate")?,
        seed: num("seed")? as u64,
        norm: NormalizationParams { mean, std },
        beta_r_mgdl: num("beta_r_mgdl")?,
    })
}
