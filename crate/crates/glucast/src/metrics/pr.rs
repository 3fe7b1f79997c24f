//! Event-detection scores: sensitivity and the precision-recall curve
//! with rectangular (step) area, no interpolation.

use crate::error::MetricError;

/// Sensitivity (recall) of binary detection flags.
pub fn sensitivity_from_flags(flags: &[bool], occurrences: &[bool]) -> Result<f64, MetricError> {
    if flags.len() != occurrences.len() {
        return Err(MetricError::Domain(format!(
            "sensitivity length mismatch: {} vs {}",
            flags.len(),
            occurrences.len()
        )));
    }
    let positives = occurrences.iter().filter(|&&y| y).count();
    if positives == 0 {
        return Err(MetricError::NoPositives);
    }
    let hits = flags
        .iter()
        .zip(occurrences)
        .filter(|(&f, &y)| f && y)
        .count();
    Ok(hits as f64 / positives as f64)
}

/// Sensitivity of probabilistic forecasts at a decision threshold
/// (0.5 unless a different operating point is wanted).
pub fn sensitivity(
    probs: &[f64],
    occurrences: &[bool],
    threshold: f64,
) -> Result<f64, MetricError> {
    let flags: Vec<bool> = probs.iter().map(|&p| p >= threshold).collect();
    sensitivity_from_flags(&flags, occurrences)
}

/// Area under the precision-recall curve by rectangular summation over
/// the unique score thresholds, descending: sum of precision x recall
/// increments. Ties share a threshold; adding thresholds between
/// observed scores cannot change the result.
pub fn pr_auc(scores: &[f64], occurrences: &[bool]) -> Result<f64, MetricError> {
    let curve = pr_curve(scores, occurrences)?;
    let mut auc = 0.0;
    let mut prev_recall = 0.0;
    for &(recall, precision) in &curve {
        auc += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(auc)
}

/// The stepwise (recall, precision) points at each unique threshold,
/// descending by score.
pub fn pr_curve(scores: &[f64], occurrences: &[bool]) -> Result<Vec<(f64, f64)>, MetricError> {
    if scores.is_empty() {
        return Err(MetricError::Empty("pr_curve"));
    }
    if scores.len() != occurrences.len() {
        return Err(MetricError::Domain(format!(
            "pr length mismatch: {} vs {}",
            scores.len(),
            occurrences.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::Domain("non-finite score".into()));
    }
    let positives = occurrences.iter().filter(|&&y| y).count();
    if positives == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut curve = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // absorb the whole tie group before emitting a point
        while i < order.len() && scores[order[i]] == threshold {
            if occurrences[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        curve.push((recall, precision));
    }
    Ok(curve)
}
