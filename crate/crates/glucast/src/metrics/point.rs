//! Pointwise accuracy and probability scores.

use crate::error::MetricError;

/// Mean absolute relative difference as a percentage:
/// 100 * mean(|pred - ref| / ref).
pub fn mard(pred: &[f64], reference: &[f64]) -> Result<f64, MetricError> {
    if pred.is_empty() {
        return Err(MetricError::Empty("mard"));
    }
    if pred.len() != reference.len() {
        return Err(MetricError::Domain(format!(
            "mard length mismatch: {} vs {}",
            pred.len(),
            reference.len()
        )));
    }
    let mut acc = 0.0;
    for (&p, &r) in pred.iter().zip(reference) {
        if r.is_nan() || r <= 0.0 {
            return Err(MetricError::NonPositiveReference(r));
        }
        acc += (p - r).abs() / r;
    }
    Ok(100.0 * acc / pred.len() as f64)
}

/// Brier score: mean squared gap between forecast probabilities and
/// binary occurrences.
pub fn brier(probs: &[f64], occurrences: &[bool]) -> Result<f64, MetricError> {
    if probs.is_empty() {
        return Err(MetricError::Empty("brier"));
    }
    if probs.len() != occurrences.len() {
        return Err(MetricError::Domain(format!(
            "brier length mismatch: {} vs {}",
            probs.len(),
            occurrences.len()
        )));
    }
    let mut acc = 0.0;
    for (&g, &y) in probs.iter().zip(occurrences) {
        if !(0.0..=1.0).contains(&g) {
            return Err(MetricError::BadProbability(g));
        }
        let y = if y { 1.0 } else { 0.0 };
        acc += (g - y) * (g - y);
    }
    Ok(acc / probs.len() as f64)
}
