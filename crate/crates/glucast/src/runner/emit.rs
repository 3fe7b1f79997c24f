//! File emission: per-cell reports (CSV + JSON), plot data (PR curves,
//! coverage curves, grid scatter, rolling forecasts), per-patient metric
//! matrices, and the combined markdown table. All output is
//! deterministic byte-for-byte given identical inputs.

use std::path::{Path, PathBuf};

use crate::error::RunError;
use crate::metrics::{CalibrationCurve, MetricsReport, RiskZone};
use crate::runner::evaluate::EvalArtifacts;
use crate::runner::rolling::RollingForecast;

/// Everything one evaluated cell can emit.
pub struct CellOutputs<'a> {
    pub cell: &'a str,
    pub report: &'a MetricsReport,
    pub artifacts: &'a EvalArtifacts,
    pub rolling: Option<&'a RollingForecast>,
    pub training_log_csv: Option<String>,
}

fn write(path: &Path, content: &str) -> Result<(), RunError> {
    std::fs::write(path, content).map_err(|e| RunError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn ensure_dir(dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|e| RunError::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn pr_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("recall,precision\n");
    for (r, p) in points {
        out.push_str(&format!("{r:?},{p:?}\n"));
    }
    out
}

fn coverage_csv(curve: &CalibrationCurve) -> String {
    let mut out = String::from("nominal,empirical\n");
    for (l, e) in curve.levels.iter().zip(&curve.empirical) {
        out.push_str(&format!("{l:?},{e:?}\n"));
    }
    out
}

fn grid_csv(points: &[(f64, f64, RiskZone)]) -> String {
    let mut out = String::from("reference,predicted,zone\n");
    for (r, p, z) in points {
        out.push_str(&format!("{r:?},{p:?},{}\n", z.label()));
    }
    out
}

fn sigma_error_csv(pairs: &[(f64, f64)]) -> String {
    let mut out = String::from("sigma,abs_error\n");
    for (s, e) in pairs {
        out.push_str(&format!("{s:?},{e:?}\n"));
    }
    out
}

/// Write one cell's files under `dir`, returning the paths written.
pub fn emit_cell_outputs(dir: &Path, outputs: &CellOutputs<'_>) -> Result<Vec<PathBuf>, RunError> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: String, content: String| -> Result<(), RunError> {
        let path = dir.join(name);
        write(&path, &content)?;
        written.push(path);
        Ok(())
    };
    let cell = outputs.cell;
    emit(
        format!("{cell}_report.csv"),
        MetricsReport::to_csv(std::slice::from_ref(outputs.report)),
    )?;
    emit(
        format!("{cell}_report.json"),
        serde_json::to_string_pretty(outputs.report).expect("report serializes") + "\n",
    )?;
    if let Some(curve) = &outputs.artifacts.coverage {
        emit(format!("{cell}_coverage.csv"), coverage_csv(curve))?;
    }
    if let Some(points) = &outputs.artifacts.pr_hypo {
        emit(format!("{cell}_pr_hypo.csv"), pr_csv(points))?;
    }
    if let Some(points) = &outputs.artifacts.pr_hyper {
        emit(format!("{cell}_pr_hyper.csv"), pr_csv(points))?;
    }
    emit(
        format!("{cell}_grid_points.csv"),
        grid_csv(&outputs.artifacts.grid_points),
    )?;
    emit(
        format!("{cell}_sigma_error.csv"),
        sigma_error_csv(&outputs.artifacts.sigma_error),
    )?;
    if let Some(rolling) = outputs.rolling {
        emit(format!("{cell}_rolling.csv"), rolling.to_csv())?;
    }
    if let Some(log) = &outputs.training_log_csv {
        emit(format!("{cell}_training_log.csv"), log.clone())?;
    }
    Ok(written)
}

/// Combined table over every cell, in CSV and markdown. Rows are sorted
/// by model label so regeneration from per-cell files is byte-identical.
pub fn emit_combined_report(dir: &Path, reports: &[MetricsReport]) -> Result<(), RunError> {
    ensure_dir(dir)?;
    let mut sorted = reports.to_vec();
    sorted.sort_by(|a, b| a.model.cmp(&b.model));
    write(&dir.join("report.csv"), &MetricsReport::to_csv(&sorted))?;
    write(&dir.join("report.md"), &MetricsReport::to_markdown(&sorted))
}

/// Per-patient score matrix (rows: patients, columns: named conditions)
/// for boxplot-style summaries.
pub fn matrix_csv(row_label: &str, rows: &[(String, Vec<f64>)], columns: &[String]) -> String {
    let mut out = format!("{row_label},{}\n", columns.join(","));
    for (name, values) in rows {
        let cells: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&format!("{name},{}\n", cells.join(",")));
    }
    out
}

pub fn emit_matrix(
    dir: &Path,
    file: &str,
    row_label: &str,
    rows: &[(String, Vec<f64>)],
    columns: &[String],
) -> Result<(), RunError> {
    ensure_dir(dir)?;
    write(&dir.join(file), &matrix_csv(row_label, rows, columns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ErrorGridSpec;

    fn report(model: &str) -> MetricsReport {
        MetricsReport {
            model: model.into(),
            zone_a_pct: 95.0,
            mard_pct: 5.0,
            hypo_sensitivity: Some(0.9),
            hypo_brier: Some(0.02),
            hypo_pr_auc: Some(0.92),
            hyper_sensitivity: Some(0.93),
            hyper_brier: Some(0.02),
            hyper_pr_auc: Some(0.95),
            mce: Some(0.04),
            rho: Some(0.6),
            rho_z: Some(0.2),
        }
    }

    fn artifacts() -> EvalArtifacts {
        let grid = ErrorGridSpec::clarke();
        EvalArtifacts {
            coverage: Some(CalibrationCurve {
                levels: vec![0.5, 0.9],
                empirical: vec![0.52, 0.88],
                mce: 0.02,
            }),
            pr_hypo: Some(vec![(0.5, 1.0), (1.0, 0.9)]),
            pr_hyper: Some(vec![(1.0, 1.0)]),
            grid_points: vec![(100.0, 101.0, grid.classify(100.0, 101.0).unwrap())],
            sigma_error: vec![(3.0, 2.0), (8.0, 9.0)],
        }
    }

    #[test]
    fn cell_emission_writes_expected_files_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let r = report("transformer_evidential");
        let a = artifacts();
        let outputs = CellOutputs {
            cell: "transformer_evidential",
            report: &r,
            artifacts: &a,
            rolling: None,
            training_log_csv: Some("epoch,train_loss,val_loss\n0,1.0,1.1\n".into()),
        };
        let written = emit_cell_outputs(dir.path(), &outputs).unwrap();
        assert_eq!(written.len(), 8);
        let first: Vec<Vec<u8>> = written
            .iter()
            .map(|p| std::fs::read(p).unwrap())
            .collect();
        // emit again into a second directory: byte-identical files
        let dir2 = tempfile::tempdir().unwrap();
        let written2 = emit_cell_outputs(dir2.path(), &outputs).unwrap();
        for (p, bytes) in written2.iter().zip(&first) {
            assert_eq!(&std::fs::read(p).unwrap(), bytes);
        }
    }

    #[test]
    fn round_trip_report_csv_through_emission() {
        let dir = tempfile::tempdir().unwrap();
        let reports = vec![report("a"), report("b")];
        emit_combined_report(dir.path(), &reports).unwrap();
        let text = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        let parsed = MetricsReport::from_csv(&text).unwrap();
        assert_eq!(parsed, reports);
        let md = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
        assert!(md.starts_with("| model |"));
    }

    #[test]
    fn empty_report_list_yields_header_only() {
        let dir = tempfile::tempdir().unwrap();
        emit_combined_report(dir.path(), &[]).unwrap();
        let text = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn matrix_layout() {
        let rows = vec![
            ("p1".to_string(), vec![4.1, 4.4]),
            ("p2".to_string(), vec![5.0, 4.9]),
        ];
        let cols = vec!["heart_rate".to_string(), "steps".to_string()];
        let text = matrix_csv("patient", &rows, &cols);
        assert_eq!(text.lines().next().unwrap(), "patient,heart_rate,steps");
        assert_eq!(text.lines().count(), 3);
    }
}
