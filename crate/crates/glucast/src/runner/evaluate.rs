//! Per-cell evaluation: turn a trained predictor's window forecasts into
//! one result-table row plus the numeric artifacts behind the plots.

use autodiff::Tape;

use crate::baselines::{mc_dropout_predict_batch, RidgeModel};
use crate::data::{
    EventLabels, NormalizationParams, WindowedDataset, HYPER_MGDL, HYPO_MGDL,
};
use crate::error::RunError;
use crate::evidential::{aggregate_event_probs, EventAggregation, EvidentialParams};
use crate::metrics::{
    brier, coverage_curve, default_levels, mard, pr_auc, pr_curve, sensitivity,
    sensitivity_from_flags, spearman, zone_a_fraction, CalibrationCurve, ErrorGridSpec,
    MetricsReport, RiskZone,
};
use crate::models::{ForwardMode, HeadKind, SequenceModel};
use crate::predictive::PredictiveDistribution;
use crate::runner::train::batch_tensors;

/// Anything that can forecast a windowed dataset.
pub enum Predictor {
    Neural(SequenceModel),
    Ridge(RidgeModel),
}

impl Predictor {
    pub fn label(&self) -> String {
        match self {
            Predictor::Neural(m) => m.config().cell_name(),
            Predictor::Ridge(_) => "ridge".to_string(),
        }
    }

    pub fn is_probabilistic(&self) -> bool {
        match self {
            Predictor::Neural(m) => m.config().head.is_probabilistic(),
            Predictor::Ridge(_) => true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub mc_samples: usize,
    pub mc_seed: u64,
    pub event_aggregation: EventAggregation,
    pub levels: Vec<f64>,
    /// Decision threshold for probabilistic sensitivities.
    pub probability_threshold: f64,
    /// Chunk size for batched forward passes.
    pub micro_batch: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            mc_samples: 100,
            mc_seed: 9_000,
            event_aggregation: EventAggregation::MaxStep,
            levels: default_levels(),
            probability_threshold: 0.5,
            micro_batch: 128,
        }
    }
}

/// One window's forecast in mg/dL.
#[derive(Debug, Clone)]
pub struct WindowForecast {
    pub point: Vec<f64>,
    pub dists: Vec<PredictiveDistribution>,
    /// Window-scalar uncertainty: mean predictive standard deviation over
    /// the horizon steps.
    pub sigma: f64,
    pub hypo_prob: Option<f64>,
    pub hyper_prob: Option<f64>,
}

impl WindowForecast {
    fn point_crossings(&self) -> (bool, bool) {
        (
            self.point.iter().any(|&g| g < HYPO_MGDL),
            self.point.iter().any(|&g| g > HYPER_MGDL),
        )
    }

    /// Interval-rule detection: flag the event when the k-sigma band
    /// around any step's forecast crosses the threshold. The tabulated
    /// sensitivities use the probability rule; this alternative mirrors
    /// band-based alerting.
    pub fn interval_crossings(&self, k_sigma: f64) -> (bool, bool) {
        let hypo = self
            .point
            .iter()
            .zip(&self.dists)
            .any(|(&g, d)| g - k_sigma * d.std() < HYPO_MGDL);
        let hyper = self
            .point
            .iter()
            .zip(&self.dists)
            .any(|(&g, d)| g + k_sigma * d.std() > HYPER_MGDL);
        (hypo, hyper)
    }
}

/// Sensitivities under the interval detection rule at `k_sigma` bands.
pub fn interval_rule_sensitivities(
    forecasts: &[WindowForecast],
    labels: &EventLabels,
    k_sigma: f64,
) -> (Option<f64>, Option<f64>) {
    let flags: Vec<(bool, bool)> = forecasts
        .iter()
        .map(|f| f.interval_crossings(k_sigma))
        .collect();
    let hypo: Vec<bool> = flags.iter().map(|f| f.0).collect();
    let hyper: Vec<bool> = flags.iter().map(|f| f.1).collect();
    (
        sensitivity_from_flags(&hypo, &labels.hypo).ok(),
        sensitivity_from_flags(&hyper, &labels.hyper).ok(),
    )
}

/// Numeric artifacts behind the evaluation plots.
#[derive(Debug, Clone)]
pub struct EvalArtifacts {
    pub coverage: Option<CalibrationCurve>,
    pub pr_hypo: Option<Vec<(f64, f64)>>,
    pub pr_hyper: Option<Vec<(f64, f64)>>,
    /// (reference, predicted, zone) per pooled (window, step) pair.
    pub grid_points: Vec<(f64, f64, RiskZone)>,
    /// (window sigma, window mean abs error) pairs.
    pub sigma_error: Vec<(f64, f64)>,
}

/// Forecast every window of a dataset.
pub fn predict_windows(
    predictor: &Predictor,
    set: &WindowedDataset,
    norm: &NormalizationParams,
    settings: &EvalSettings,
) -> Result<Vec<WindowForecast>, RunError> {
    let idx: Vec<usize> = (0..set.n()).collect();
    let mut out = Vec::with_capacity(set.n());
    match predictor {
        Predictor::Neural(model) => {
            for chunk in idx.chunks(settings.micro_batch) {
                match model.config().head {
                    HeadKind::Plain => forecast_plain(model, set, norm, chunk, &mut out)?,
                    HeadKind::Evidential => {
                        forecast_evidential(model, set, norm, chunk, settings, &mut out)?
                    }
                    HeadKind::Dropout => {
                        forecast_dropout(model, set, norm, chunk, settings, &mut out)?
                    }
                }
            }
        }
        Predictor::Ridge(model) => {
            for &i in &idx {
                let dists = model.predict_window(set.input(i))?;
                out.push(summarize_probabilistic(dists, settings.event_aggregation));
            }
        }
    }
    Ok(out)
}

fn forecast_plain(
    model: &SequenceModel,
    set: &WindowedDataset,
    norm: &NormalizationParams,
    chunk: &[usize],
    out: &mut Vec<WindowForecast>,
) -> Result<(), RunError> {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let (input, _) = batch_tensors(set, norm, chunk);
    let pred = model.forward(&tape, &bound, &input, ForwardMode::Eval)?.value();
    let h = set.horizon();
    for row in pred.data().chunks(h) {
        let point: Vec<f64> = row.iter().map(|&v| norm.denorm_glucose(v)).collect();
        let dists = point.iter().map(|&v| PredictiveDistribution::Point(v)).collect();
        out.push(WindowForecast {
            point,
            dists,
            sigma: 0.0,
            hypo_prob: None,
            hyper_prob: None,
        });
    }
    Ok(())
}

fn forecast_evidential(
    model: &SequenceModel,
    set: &WindowedDataset,
    norm: &NormalizationParams,
    chunk: &[usize],
    settings: &EvalSettings,
    out: &mut Vec<WindowForecast>,
) -> Result<(), RunError> {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let (input, _) = batch_tensors(set, norm, chunk);
    let raw = model.forward(&tape, &bound, &input, ForwardMode::Eval)?.value();
    let h = set.horizon();
    for row in raw.data().chunks(4 * h) {
        let params = EvidentialParams::from_raw(row, h)?.denormalize(norm);
        let mut dists = Vec::with_capacity(h);
        let mut sigma = 0.0;
        for k in 0..h {
            let t = params.student_t(k)?;
            sigma += params.decompose(k)?.predictive.sqrt();
            dists.push(PredictiveDistribution::StudentT(t));
        }
        sigma /= h as f64;
        let hypo = params.event_probability(
            HYPO_MGDL,
            crate::evidential::EventDirection::Below,
            settings.event_aggregation,
        )?;
        let hyper = params.event_probability(
            HYPER_MGDL,
            crate::evidential::EventDirection::Above,
            settings.event_aggregation,
        )?;
        out.push(WindowForecast {
            point: params.gamma.clone(),
            dists,
            sigma,
            hypo_prob: Some(hypo),
            hyper_prob: Some(hyper),
        });
    }
    Ok(())
}

fn forecast_dropout(
    model: &SequenceModel,
    set: &WindowedDataset,
    norm: &NormalizationParams,
    chunk: &[usize],
    settings: &EvalSettings,
    out: &mut Vec<WindowForecast>,
) -> Result<(), RunError> {
    let (input, _) = batch_tensors(set, norm, chunk);
    let forecasts =
        mc_dropout_predict_batch(model, &input, settings.mc_samples, settings.mc_seed, norm)?;
    for f in forecasts {
        let h = f.horizon();
        let dists: Vec<PredictiveDistribution> = (0..h).map(|k| f.distribution(k)).collect();
        let sigma = f.std().iter().sum::<f64>() / h as f64;
        out.push(WindowForecast {
            point: f.mean().to_vec(),
            dists,
            sigma,
            hypo_prob: Some(f.event_probability(HYPO_MGDL, true)),
            hyper_prob: Some(f.event_probability(HYPER_MGDL, false)),
        });
    }
    Ok(())
}

fn summarize_probabilistic(
    dists: Vec<PredictiveDistribution>,
    aggregation: EventAggregation,
) -> WindowForecast {
    let h = dists.len();
    let point: Vec<f64> = dists.iter().map(|d| d.mean()).collect();
    let sigma = dists.iter().map(|d| d.std()).sum::<f64>() / h as f64;
    let hypo: Vec<f64> = dists.iter().map(|d| d.prob_below(HYPO_MGDL)).collect();
    let hyper: Vec<f64> = dists.iter().map(|d| d.prob_above(HYPER_MGDL)).collect();
    WindowForecast {
        point,
        dists,
        sigma,
        hypo_prob: Some(aggregate_event_probs(&hypo, aggregation)),
        hyper_prob: Some(aggregate_event_probs(&hyper, aggregation)),
    }
}

/// Fill one result row. Point-forecast heads leave the probabilistic
/// columns empty; probabilistic heads fill every column.
pub fn evaluate(
    predictor: &Predictor,
    test: &WindowedDataset,
    labels: &EventLabels,
    norm: &NormalizationParams,
    grid: &ErrorGridSpec,
    settings: &EvalSettings,
) -> Result<(MetricsReport, EvalArtifacts), RunError> {
    if labels.hypo.len() != test.n() {
        return Err(RunError::State(format!(
            "dataset has {} windows but labels cover {}",
            test.n(),
            labels.hypo.len()
        )));
    }
    if test.n() == 0 {
        return Err(RunError::State("empty test set".into()));
    }
    let forecasts = predict_windows(predictor, test, norm, settings)?;
    evaluate_forecasts(&predictor.label(), predictor.is_probabilistic(), &forecasts, test, labels, grid, settings)
}

/// Metric assembly over precomputed window forecasts.
pub fn evaluate_forecasts(
    label: &str,
    probabilistic: bool,
    forecasts: &[WindowForecast],
    test: &WindowedDataset,
    labels: &EventLabels,
    grid: &ErrorGridSpec,
    settings: &EvalSettings,
) -> Result<(MetricsReport, EvalArtifacts), RunError> {
    let h = test.horizon();
    // pooled (window, step) accuracy
    let mut pred_flat = Vec::with_capacity(test.n() * h);
    let mut ref_flat = Vec::with_capacity(test.n() * h);
    for (i, f) in forecasts.iter().enumerate() {
        pred_flat.extend_from_slice(&f.point);
        ref_flat.extend_from_slice(test.target(i));
    }
    // grid zones want positive predictions; clamp to the smallest
    // plausible meter reading
    let pred_clamped: Vec<f64> = pred_flat.iter().map(|&p| p.max(1.0)).collect();
    let zones = grid.classify_all(&ref_flat, &pred_clamped)?;
    let zone_a_pct = zone_a_fraction(&zones)?;
    let mard_pct = mard(&pred_flat, &ref_flat)?;
    let grid_points: Vec<(f64, f64, RiskZone)> = ref_flat
        .iter()
        .zip(&pred_clamped)
        .zip(&zones)
        .map(|((&r, &p), &z)| (r, p, z))
        .collect();

    // per-window errors and the uncertainty pairing
    let window_err: Vec<f64> = forecasts
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let target = test.target(i);
            f.point
                .iter()
                .zip(target)
                .map(|(p, r)| (p - r).abs())
                .sum::<f64>()
                / h as f64
        })
        .collect();
    let sigmas: Vec<f64> = forecasts.iter().map(|f| f.sigma).collect();
    let sigma_error: Vec<(f64, f64)> = sigmas
        .iter()
        .zip(&window_err)
        .map(|(&s, &e)| (s, e))
        .collect();

    // sensitivities
    let (hypo_sens, hyper_sens) = if probabilistic {
        let hypo_probs: Vec<f64> = forecasts.iter().map(|f| f.hypo_prob.unwrap()).collect();
        let hyper_probs: Vec<f64> = forecasts.iter().map(|f| f.hyper_prob.unwrap()).collect();
        (
            sensitivity(&hypo_probs, &labels.hypo, settings.probability_threshold).ok(),
            sensitivity(&hyper_probs, &labels.hyper, settings.probability_threshold).ok(),
        )
    } else {
        let crossings: Vec<(bool, bool)> =
            forecasts.iter().map(|f| f.point_crossings()).collect();
        let hypo_flags: Vec<bool> = crossings.iter().map(|c| c.0).collect();
        let hyper_flags: Vec<bool> = crossings.iter().map(|c| c.1).collect();
        (
            sensitivity_from_flags(&hypo_flags, &labels.hypo).ok(),
            sensitivity_from_flags(&hyper_flags, &labels.hyper).ok(),
        )
    };

    let mut report = MetricsReport {
        model: label.to_string(),
        zone_a_pct,
        mard_pct,
        hypo_sensitivity: hypo_sens,
        hypo_brier: None,
        hypo_pr_auc: None,
        hyper_sensitivity: hyper_sens,
        hyper_brier: None,
        hyper_pr_auc: None,
        mce: None,
        rho: None,
        rho_z: None,
    };
    let mut artifacts = EvalArtifacts {
        coverage: None,
        pr_hypo: None,
        pr_hyper: None,
        grid_points,
        sigma_error,
    };

    if probabilistic {
        let hypo_probs: Vec<f64> = forecasts.iter().map(|f| f.hypo_prob.unwrap()).collect();
        let hyper_probs: Vec<f64> = forecasts.iter().map(|f| f.hyper_prob.unwrap()).collect();
        report.hypo_brier = Some(brier(&hypo_probs, &labels.hypo)?);
        report.hyper_brier = Some(brier(&hyper_probs, &labels.hyper)?);
        report.hypo_pr_auc = pr_auc(&hypo_probs, &labels.hypo).ok();
        report.hyper_pr_auc = pr_auc(&hyper_probs, &labels.hyper).ok();
        artifacts.pr_hypo = pr_curve(&hypo_probs, &labels.hypo).ok();
        artifacts.pr_hyper = pr_curve(&hyper_probs, &labels.hyper).ok();

        // pooled coverage over (window, step)
        let mut dists = Vec::with_capacity(test.n() * h);
        let mut obs = Vec::with_capacity(test.n() * h);
        for (i, f) in forecasts.iter().enumerate() {
            for (k, d) in f.dists.iter().enumerate() {
                dists.push(d.clone());
                obs.push(test.target(i)[k]);
            }
        }
        let curve = coverage_curve(&dists, &obs, &settings.levels)?;
        report.mce = Some(curve.mce);
        artifacts.coverage = Some(curve);

        // uncertainty correlations
        report.rho = spearman(&sigmas, &window_err).ok();
        let final_zone: Vec<f64> = forecasts
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let r = test.target(i)[h - 1];
                let p = f.point[h - 1].max(1.0);
                grid.classify(r, p).map(|z| z.ordinal() as f64)
            })
            .collect::<Result<_, _>>()?;
        report.rho_z = spearman(&sigmas, &final_zone).ok();
    }
    Ok((report, artifacts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::label_events;
    use crate::models::{Architecture, ModelConfig};
    use crate::runner::prepare;
    use crate::synth::{generate_series, SynthSpec};

    fn prepared() -> crate::runner::PreparedData {
        // long enough that the chronological test split spans a full
        // daily cycle and sees both hypo and hyper events
        let s = generate_series(
            "p1",
            &SynthSpec {
                len: 1_600,
                seed: 21,
                base: 120.0,
                daily_amp: 55.0,
                meal_amp: 25.0,
                ..Default::default()
            },
        )
        .unwrap();
        prepare(&[s], 6).unwrap()
    }

    /// Forecasts that reproduce the target exactly with a small honest
    /// spread.
    fn oracle_forecasts(test: &WindowedDataset) -> Vec<WindowForecast> {
        (0..test.n())
            .map(|i| {
                let point = test.target(i).to_vec();
                let dists = point
                    .iter()
                    .map(|&m| PredictiveDistribution::Gaussian {
                        mean: m,
                        variance: 1.0,
                    })
                    .collect();
                let hypo = point.iter().any(|&g| g < HYPO_MGDL);
                let hyper = point.iter().any(|&g| g > HYPER_MGDL);
                WindowForecast {
                    point,
                    dists,
                    sigma: 1.0,
                    hypo_prob: Some(if hypo { 0.9 } else { 0.1 }),
                    hyper_prob: Some(if hyper { 0.9 } else { 0.1 }),
                }
            })
            .collect()
    }

    #[test]
    fn oracle_predictor_scores_perfectly() {
        let data = prepared();
        let labels = label_events(&data.test);
        let forecasts = oracle_forecasts(&data.test);
        let grid = ErrorGridSpec::clarke();
        let (report, artifacts) = evaluate_forecasts(
            "oracle",
            true,
            &forecasts,
            &data.test,
            &labels,
            &grid,
            &EvalSettings::default(),
        )
        .unwrap();
        assert_eq!(report.zone_a_pct, 100.0);
        assert_eq!(report.mard_pct, 0.0);
        assert_eq!(report.hypo_sensitivity, Some(1.0));
        assert_eq!(report.hyper_sensitivity, Some(1.0));
        assert_eq!(report.hypo_pr_auc, Some(1.0));
        // constant sigma leaves the rank correlations undefined, so the
        // full-columns contract is exercised with real models elsewhere
        assert!(artifacts.coverage.is_some());
        assert!(report.mce.is_some());
        report.validate().unwrap();
    }

    #[test]
    fn constant_forecaster_misses_every_event() {
        let data = prepared();
        let labels = label_events(&data.test);
        assert!(
            labels.hypo.iter().any(|&b| b),
            "test data must contain hypo events for this check"
        );
        let forecasts: Vec<WindowForecast> = (0..data.test.n())
            .map(|_| WindowForecast {
                point: vec![120.0; 6],
                dists: vec![PredictiveDistribution::Point(120.0); 6],
                sigma: 0.0,
                hypo_prob: None,
                hyper_prob: None,
            })
            .collect();
        let grid = ErrorGridSpec::clarke();
        let (report, _) = evaluate_forecasts(
            "const120",
            false,
            &forecasts,
            &data.test,
            &labels,
            &grid,
            &EvalSettings::default(),
        )
        .unwrap();
        assert_eq!(report.hypo_sensitivity, Some(0.0));
        assert!(!report.has_uq_columns());
        assert!(report.hypo_brier.is_none());
    }

    #[test]
    fn plain_head_rows_leave_uq_columns_blank_and_probabilistic_fill_them() {
        let data = prepared();
        let settings = EvalSettings {
            mc_samples: 8,
            ..Default::default()
        };
        let grid = ErrorGridSpec::clarke();
        for head in [HeadKind::Plain, HeadKind::Dropout, HeadKind::Evidential] {
            let model = SequenceModel::new(ModelConfig {
                architecture: Architecture::Lstm,
                head,
                horizon: 6,
                dropout_rate: 0.2,
                seed: 5,
            })
            .unwrap();
            let predictor = Predictor::Neural(model);
            let (report, _) = evaluate(
                &predictor,
                &data.test,
                &data.test_labels,
                &data.norm,
                &grid,
                &settings,
            )
            .unwrap();
            report.validate().unwrap();
            assert_eq!(
                report.has_uq_columns(),
                head.is_probabilistic(),
                "head {}",
                head.name()
            );
        }
    }

    #[test]
    fn ridge_predictor_fills_all_columns() {
        let data = prepared();
        let ridge = crate::baselines::ridge_fit_windows(&data.train).unwrap();
        let predictor = Predictor::Ridge(ridge);
        let grid = ErrorGridSpec::clarke();
        let (report, artifacts) = evaluate(
            &predictor,
            &data.test,
            &data.test_labels,
            &data.norm,
            &grid,
            &EvalSettings::default(),
        )
        .unwrap();
        report.validate().unwrap();
        assert!(report.has_uq_columns());
        assert!(artifacts.pr_hypo.is_some());
        // a sane baseline on smooth synthetic data
        assert!(report.zone_a_pct > 50.0, "zA {}", report.zone_a_pct);
    }

    #[test]
    fn interval_rule_detects_near_misses_the_point_rule_drops() {
        // forecast sits just above the hypo threshold; a 1-sigma band
        // crosses it, the raw point does not
        let forecasts = vec![WindowForecast {
            point: vec![75.0; 6],
            dists: vec![
                PredictiveDistribution::Gaussian {
                    mean: 75.0,
                    variance: 64.0,
                };
                6
            ],
            sigma: 8.0,
            hypo_prob: Some(0.3),
            hyper_prob: Some(0.0),
        }];
        let labels = EventLabels {
            hypo: vec![true],
            hyper: vec![false],
        };
        assert!(!forecasts[0].point_crossings().0);
        let (hypo, _) = interval_rule_sensitivities(&forecasts, &labels, 1.0);
        assert_eq!(hypo, Some(1.0));
        // a zero-width band reduces to the point rule
        let (hypo0, _) = interval_rule_sensitivities(&forecasts, &labels, 0.0);
        assert_eq!(hypo0, Some(0.0));
    }

    #[test]
    fn labels_must_match_dataset() {
        let data = prepared();
        let bad_labels = EventLabels {
            hypo: vec![false; 3],
            hyper: vec![false; 3],
        };
        let model = SequenceModel::new(ModelConfig {
            architecture: Architecture::Lstm,
            head: HeadKind::Plain,
            horizon: 6,
            dropout_rate: 0.2,
            seed: 5,
        })
        .unwrap();
        let err = evaluate(
            &Predictor::Neural(model),
            &data.test,
            &bad_labels,
            &data.norm,
            &ErrorGridSpec::clarke(),
            &EvalSettings::default(),
        )
        .unwrap_err();
        assert!(matches!(err, RunError::State(_)));
    }
}
