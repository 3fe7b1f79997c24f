//! Per-patient feature-set comparison: Friedman test over the patients x
//! conditions score matrix, then pairwise Wilcoxon signed-rank tests with
//! Holm adjustment.

use std::collections::BTreeMap;

use crate::error::RunError;
use crate::metrics::{friedman_test, holm_adjust, wilcoxon_signed_rank, FriedmanResult};

/// One pairwise comparison between two conditions.
#[derive(Debug, Clone)]
pub struct PairwiseTest {
    pub left: String,
    pub right: String,
    pub w_plus: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    /// Skipped pairs (too few non-zero differences) carry the reason.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone)]
pub struct AnalysisResult {
    pub friedman: FriedmanResult,
    pub conditions: Vec<String>,
    pub pairwise: Vec<PairwiseTest>,
}

impl AnalysisResult {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "friedman: chi2({}) = {:.4}, p = {:.4}, kendall_w = {:.4}\n",
            self.friedman.n_conditions - 1,
            self.friedman.chi2,
            self.friedman.p_value,
            self.friedman.kendall_w
        ));
        for (name, rank) in self.conditions.iter().zip(&self.friedman.mean_ranks) {
            out.push_str(&format!("mean_rank {name} = {rank:.4}\n"));
        }
        for p in &self.pairwise {
            match &p.skipped {
                Some(reason) => out.push_str(&format!(
                    "wilcoxon {} vs {}: skipped ({reason})\n",
                    p.left, p.right
                )),
                None => out.push_str(&format!(
                    "wilcoxon {} vs {}: W+ = {:.1}, p = {:.4}, holm_p = {:.4}\n",
                    p.left, p.right, p.w_plus, p.p_raw, p.p_adjusted
                )),
            }
        }
        out
    }
}

/// `scores` maps condition name -> per-patient scores, aligned with
/// `patients`. Every (patient, condition) cell must be present.
pub fn per_patient_analysis(
    patients: &[String],
    scores: &BTreeMap<String, Vec<f64>>,
) -> Result<AnalysisResult, RunError> {
    let conditions: Vec<String> = scores.keys().cloned().collect();
    for (condition, values) in scores {
        if values.len() != patients.len() {
            let missing = if values.len() < patients.len() {
                &patients[values.len()]
            } else {
                &patients[0]
            };
            return Err(RunError::MissingCell {
                patient: missing.clone(),
                condition: condition.clone(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RunError::State(format!(
                "non-finite score under condition {condition}"
            )));
        }
    }
    let matrix: Vec<Vec<f64>> = (0..patients.len())
        .map(|i| conditions.iter().map(|c| scores[c][i]).collect())
        .collect();
    let friedman = friedman_test(&matrix)?;

    // all pairwise comparisons, Holm-adjusted together
    let mut pairs = Vec::new();
    for i in 0..conditions.len() {
        for j in (i + 1)..conditions.len() {
            let diffs: Vec<f64> = (0..patients.len())
                .map(|p| scores[&conditions[i]][p] - scores[&conditions[j]][p])
                .collect();
            pairs.push((i, j, wilcoxon_signed_rank(&diffs)));
        }
    }
    let tested_p: Vec<f64> = pairs
        .iter()
        .filter_map(|(_, _, r)| r.as_ref().ok().map(|r| r.p_value))
        .collect();
    let adjusted = holm_adjust(&tested_p);
    let mut adj_iter = adjusted.into_iter();
    let pairwise = pairs
        .into_iter()
        .map(|(i, j, result)| match result {
            Ok(r) => PairwiseTest {
                left: conditions[i].clone(),
                right: conditions[j].clone(),
                w_plus: r.w_plus,
                p_raw: r.p_value,
                p_adjusted: adj_iter.next().expect("one adjusted p per tested pair"),
                skipped: None,
            },
            Err(e) => PairwiseTest {
                left: conditions[i].clone(),
                right: conditions[j].clone(),
                w_plus: f64::NAN,
                p_raw: f64::NAN,
                p_adjusted: f64::NAN,
                skipped: Some(e.to_string()),
            },
        })
        .collect();
    Ok(AnalysisResult {
        friedman,
        conditions,
        pairwise,
    })
}
