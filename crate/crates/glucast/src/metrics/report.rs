//! One result-table row per (model, head) cell, with fixed column order
//! for CSV/JSON emission: model, za, mard, s70, b70, a70, s180, b180,
//! a180, mce, rho, rho_z. Point-forecast heads leave the probabilistic
//! columns empty.

use serde::{Deserialize, Serialize};

use crate::error::MetricError;

pub const REPORT_COLUMNS: [&str; 12] = [
    "model", "za", "mard", "s70", "b70", "a70", "s180", "b180", "a180", "mce", "rho", "rho_z",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub zone_a_pct: f64,
    pub mard_pct: f64,
    pub hypo_sensitivity: Option<f64>,
    pub hypo_brier: Option<f64>,
    pub hypo_pr_auc: Option<f64>,
    pub hyper_sensitivity: Option<f64>,
    pub hyper_brier: Option<f64>,
    pub hyper_pr_auc: Option<f64>,
    pub mce: Option<f64>,
    pub rho: Option<f64>,
    pub rho_z: Option<f64>,
}

impl MetricsReport {
    /// Sanity bounds on every populated field.
    pub fn validate(&self) -> Result<(), MetricError> {
        let pct = |v: f64, what: &str| -> Result<(), MetricError> {
            if !(0.0..=100.0).contains(&v) || !v.is_finite() {
                return Err(MetricError::Domain(format!("{what} out of range: {v}")));
            }
            Ok(())
        };
        pct(self.zone_a_pct, "zone A percentage")?;
        if !self.mard_pct.is_finite() || self.mard_pct < 0.0 {
            return Err(MetricError::Domain(format!("mard: {}", self.mard_pct)));
        }
        let unit = |v: Option<f64>, what: &str| -> Result<(), MetricError> {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                    return Err(MetricError::Domain(format!("{what} out of range: {v}")));
                }
            }
            Ok(())
        };
        unit(self.hypo_sensitivity, "hypo sensitivity")?;
        unit(self.hypo_brier, "hypo brier")?;
        unit(self.hypo_pr_auc, "hypo pr-auc")?;
        unit(self.hyper_sensitivity, "hyper sensitivity")?;
        unit(self.hyper_brier, "hyper brier")?;
        unit(self.hyper_pr_auc, "hyper pr-auc")?;
        unit(self.mce, "mce")?;
        for (v, what) in [(self.rho, "rho"), (self.rho_z, "rho_z")] {
            if let Some(v) = v {
                if !(-1.0..=1.0).contains(&v) || !v.is_finite() {
                    return Err(MetricError::Domain(format!("{what} out of range: {v}")));
                }
            }
        }
        Ok(())
    }

    /// True when every probabilistic column is populated.
    pub fn has_uq_columns(&self) -> bool {
        self.hypo_brier.is_some()
            && self.hypo_pr_auc.is_some()
            && self.hyper_brier.is_some()
            && self.hyper_pr_auc.is_some()
            && self.mce.is_some()
            && self.rho.is_some()
            && self.rho_z.is_some()
    }

    pub fn csv_header() -> String {
        REPORT_COLUMNS.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        let cell = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        format!(
            "{},{:?},{:?},{},{},{},{},{},{},{},{},{}",
            self.model,
            self.zone_a_pct,
            self.mard_pct,
            cell(self.hypo_sensitivity),
            cell(self.hypo_brier),
            cell(self.hypo_pr_auc),
            cell(self.hyper_sensitivity),
            cell(self.hyper_brier),
            cell(self.hyper_pr_auc),
            cell(self.mce),
            cell(self.rho),
            cell(self.rho_z),
        )
    }

    /// Emit a header plus one row per report.
    pub fn to_csv(reports: &[MetricsReport]) -> String {
        let mut out = Self::csv_header();
        out.push('\n');
        for r in reports {
            out.push_str(&r.to_csv_row());
            out.push('\n');
        }
        out
    }

    /// Parse the exact format produced by [`MetricsReport::to_csv`].
    pub fn from_csv(text: &str) -> Result<Vec<MetricsReport>, MetricError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or(MetricError::Empty("metrics csv"))?;
        if header != Self::csv_header() {
            return Err(MetricError::Domain(format!(
                "unexpected metrics header `{header}`"
            )));
        }
        let mut out = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != REPORT_COLUMNS.len() {
                return Err(MetricError::Domain(format!(
                    "row {}: expected {} cells, got {}",
                    lineno + 2,
                    REPORT_COLUMNS.len(),
                    cells.len()
                )));
            }
            let req = |i: usize| -> Result<f64, MetricError> {
                cells[i]
                    .parse()
                    .map_err(|_| MetricError::Domain(format!("bad number `{}`", cells[i])))
            };
            let opt = |i: usize| -> Result<Option<f64>, MetricError> {
                if cells[i].is_empty() {
                    Ok(None)
                } else {
                    req(i).map(Some)
                }
            };
            out.push(MetricsReport {
                model: cells[0].to_string(),
                zone_a_pct: req(1)?,
                mard_pct: req(2)?,
                hypo_sensitivity: opt(3)?,
                hypo_brier: opt(4)?,
                hypo_pr_auc: opt(5)?,
                hyper_sensitivity: opt(6)?,
                hyper_brier: opt(7)?,
                hyper_pr_auc: opt(8)?,
                mce: opt(9)?,
                rho: opt(10)?,
                rho_z: opt(11)?,
            });
        }
        Ok(out)
    }

    /// Markdown table in the same column order.
    pub fn to_markdown(reports: &[MetricsReport]) -> String {
        let mut out = String::new();
        out.push_str("| ");
        out.push_str(&REPORT_COLUMNS.join(" | "));
        out.push_str(" |\n|");
        out.push_str(&"---|".repeat(REPORT_COLUMNS.len()));
        out.push('\n');
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
        for r in reports {
            out.push_str(&format!(
                "| {} | {:.1} | {:.2} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                r.model,
                r.zone_a_pct,
                r.mard_pct,
                cell(r.hypo_sensitivity),
                cell(r.hypo_brier),
                cell(r.hypo_pr_auc),
                cell(r.hyper_sensitivity),
                cell(r.hyper_brier),
                cell(r.hyper_pr_auc),
                cell(r.mce),
                cell(r.rho),
                cell(r.rho_z),
            ));
        }
        out
    }
}
