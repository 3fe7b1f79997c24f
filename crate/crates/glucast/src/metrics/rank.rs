//! Rank statistics: tie-aware Spearman correlation, the Friedman test
//! with Kendall's W effect size, and Wilcoxon signed-rank with Holm
//! step-down adjustment.

use crate::dist::{norm_cdf, reg_inc_gamma_upper};
use crate::error::MetricError;

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of average-ranked data.
pub fn spearman(u: &[f64], v: &[f64]) -> Result<f64, MetricError> {
    if u.len() != v.len() {
        return Err(MetricError::Domain(format!(
            "spearman length mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.len() < 3 {
        return Err(MetricError::Empty("spearman needs at least 3 pairs"));
    }
    let ru = average_ranks(u);
    let rv = average_ranks(v);
    pearson(&ru, &rv)
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ConstantInput);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FriedmanResult {
    pub chi2: f64,
    pub p_value: f64,
    pub kendall_w: f64,
    /// Mean rank per condition; rank 1 is the smallest value.
    pub mean_ranks: Vec<f64>,
    pub n_subjects: usize,
    pub n_conditions: usize,
}

/// Friedman test over a complete subjects x conditions score matrix,
/// ranking within each subject with tie correction. Kendall's W is
/// chi2 / (n (k - 1)).
pub fn friedman_test(matrix: &[Vec<f64>]) -> Result<FriedmanResult, MetricError> {
    let n = matrix.len();
    let k = matrix.first().map_or(0, |row| row.len());
    if n < 2 || k < 2 {
        return Err(MetricError::DegenerateMatrix { rows: n, cols: k });
    }
    if matrix.iter().any(|row| row.len() != k) {
        return Err(MetricError::Domain("ragged score matrix".into()));
    }
    let mut rank_sums = vec![0.0; k];
    let mut tie_term = 0.0;
    for row in matrix {
        let ranks = average_ranks(row);
        for (s, r) in rank_sums.iter_mut().zip(&ranks) {
            *s += r;
        }
        // per-row tie sizes
        let mut sorted = row.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut i = 0;
        while i < k {
            let mut j = i;
            while j + 1 < k && sorted[j + 1] == sorted[i] {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            tie_term += t * t * t - t;
            i = j + 1;
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let ssbn: f64 = rank_sums.iter().map(|r| r * r).sum();
    let numerator = 12.0 / (nf * kf * (kf + 1.0)) * ssbn - 3.0 * nf * (kf + 1.0);
    let correction = 1.0 - tie_term / (nf * kf * (kf * kf - 1.0));
    let chi2 = if numerator.abs() < 1e-12 || correction <= 0.0 {
        0.0
    } else {
        numerator / correction
    };
    let p_value = if chi2 == 0.0 {
        1.0
    } else {
        reg_inc_gamma_upper((kf - 1.0) / 2.0, chi2 / 2.0)
    };
    Ok(FriedmanResult {
        chi2,
        p_value,
        kendall_w: chi2 / (nf * (kf - 1.0)),
        mean_ranks: rank_sums.iter().map(|r| r / nf).collect(),
        n_subjects: n,
        n_conditions: k,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences.
    pub w_plus: f64,
    pub z: f64,
    pub p_value: f64,
    /// Differences remaining after zeros are dropped.
    pub n_used: usize,
}

/// Two-sided Wilcoxon signed-rank test via the normal approximation with
/// continuity and tie corrections. Zero differences are dropped; at
/// least 6 non-zero differences are required for the approximation.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<WilcoxonResult, MetricError> {
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = nonzero.len();
    if n < 6 {
        return Err(MetricError::TooFewDifferences { need: 6, got: n });
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    // tie correction on the variance
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let variance = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    if variance <= 0.0 {
        return Err(MetricError::Domain(
            "zero variance in signed-rank statistic (all differences tied)".into(),
        ));
    }
    let delta = w_plus - mean;
    let corrected = delta - 0.5 * delta.signum();
    let z = corrected / variance.sqrt();
    let p_value = (2.0 * (1.0 - norm_cdf(z.abs()))).min(1.0);
    Ok(WilcoxonResult {
        w_plus,
        z,
        p_value,
        n_used: n,
    })
}

/// Holm step-down adjustment. Output aligns with the input order and is
/// monotone in the sorted order.
pub fn holm_adjust(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].partial_cmp(&p_values[b]).unwrap());
    let mut adjusted = vec![0.0; m];
    let mut running_max: f64 = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        let scaled = ((m - rank) as f64 * p_values[idx]).min(1.0);
        running_max = running_max.max(scaled);
        adjusted[idx] = running_max;
    }
    adjusted
}
