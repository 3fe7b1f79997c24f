//! The evaluation suite: accuracy (MARD, error-grid zones), event
//! detection (sensitivity, Brier, PR-AUC), calibration (coverage curves,
//! MCE), uncertainty-error correlations, and the per-patient Friedman /
//! Wilcoxon-Holm comparison machinery.

mod coverage;
mod grid;
mod point;
mod pr;
mod rank;
mod report;

pub use coverage::{coverage_curve, default_levels, CalibrationCurve};
pub use grid::{zone_a_fraction, ErrorGridSpec, RiskZone};
pub use point::{brier, mard};
pub use pr::{pr_auc, pr_curve, sensitivity, sensitivity_from_flags};
pub use rank::{
    average_ranks, friedman_test, holm_adjust, spearman, wilcoxon_signed_rank, FriedmanResult,
    WilcoxonResult,
};
pub use report::{MetricsReport, REPORT_COLUMNS};
