//! Tie-aware AUC, its Mann-Whitney form, and the normal approximation to the
//! AUC null under record-wise label shuffling.

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};

/// Area under the ROC curve, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AucValue(f64);

impl AucValue {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(AucValue(value))
        } else {
            Err(Error::InvalidParameter(format!("AUC {value} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Class counts and sizes of tied-score groups in a scored test set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieStructure {
    pub n_neg: usize,
    pub n_pos: usize,
    /// Sizes of groups of equal scores; singletons are omitted.
    pub tie_group_sizes: Vec<usize>,
}

impl TieStructure {
    pub fn n(&self) -> usize {
        self.n_neg + self.n_pos
    }

    /// Number of tie groups.
    pub fn tau(&self) -> usize {
        self.tie_group_sizes.len()
    }

    /// Σ t (t−1) (t+1) over tie groups.
    pub fn correction_sum(&self) -> f64 {
        self.tie_group_sizes
            .iter()
            .map(|&t| {
                let t = t as f64;
                t * (t - 1.0) * (t + 1.0)
            })
            .sum()
    }
}

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidParameter(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter("non-finite score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    Ok((n_neg, n_pos))
}

/// Indices of `scores` in ascending order.
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order
}

/// Midranks (1-based; tied values share the average of their ranks).
pub fn midranks(scores: &[f64]) -> Vec<f64> {
    let order = ascending(scores);
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Positions i..j hold ranks i+1..=j.
        let mid = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = mid;
        }
        i = j;
    }
    ranks
}

/// Mann-Whitney U counted for the positive class: pairs with the positive
/// scored higher, plus one half for every tied pair.
pub fn u_positive(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (_, n_pos) = class_counts(scores, labels)?;
    let rank_sum: f64 = midranks(scores)
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y)
        .map(|(r, _)| r)
        .sum();
    let np = n_pos as f64;
    Ok(rank_sum - np * (np + 1.0) / 2.0)
}

/// Rank-sum U of the negative class, the statistic whose left tail tests
/// for separation.
pub fn u_negative(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_neg, n_pos) = class_counts(scores, labels)?;
    Ok((n_neg * n_pos) as f64 - u_positive(scores, labels)?)
}

/// Tie-aware AUC computed from midranks in O(n log n).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<AucValue> {
    let (n_neg, n_pos) = class_counts(scores, labels)?;
    let u = u_positive(scores, labels)?;
    Ok(AucValue((u / (n_neg * n_pos) as f64).clamp(0.0, 1.0)))
}

/// Groups of exactly equal scores across the pooled test set.
pub fn tie_structure(scores: &[f64], labels: &[bool]) -> Result<TieStructure> {
    let (n_neg, n_pos) = class_counts(scores, labels)?;
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let tie_group_sizes = sorted
        .chunk_by(|a, b| a == b)
        .map(<[f64]>::len)
        .filter(|&len| len > 1)
        .collect();
    Ok(TieStructure {
        n_neg,
        n_pos,
        tie_group_sizes,
    })
}

/// `U = n_n n_p (1 − AUC)`. U counts half-credit pairs, so the result is
/// snapped to the half-integer grid to undo rounding in the AUC division.
pub fn u_statistic(auc: AucValue, ties: &TieStructure) -> f64 {
    let pairs = (ties.n_neg * ties.n_pos) as f64;
    (2.0 * pairs * (1.0 - auc.value())).round() / 2.0
}

/// Tie-corrected variance of the AUC under the record-wise label-shuffle null:
/// `(n+1)/(12 n_n n_p) − Σ t(t−1)(t+1) / (12 n_n n_p n (n−1))`.
pub fn phi_squared(ties: &TieStructure) -> Result<f64> {
    let n = ties.n();
    if n < 2 || ties.n_neg == 0 || ties.n_pos == 0 {
        return Err(Error::InvalidParameter(format!(
            "need n >= 2 with both classes, got n_neg={} n_pos={}",
            ties.n_neg, ties.n_pos
        )));
    }
    let (nn, np, n) = (ties.n_neg as f64, ties.n_pos as f64, n as f64);
    let base = (n + 1.0) / (12.0 * nn * np);
    if ties.tie_group_sizes.is_empty() {
        return Ok(base);
    }
    Ok(base - ties.correction_sum() / (12.0 * nn * np * n * (n - 1.0)))
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// log10 of the standard normal upper tail `1 − Φ(z)`, finite even where the
/// tail itself underflows.
pub fn normal_upper_tail_log10(z: f64) -> f64 {
    let tail = 0.5 * erfc(z / std::f64::consts::SQRT_2);
    if tail > 0.0 {
        return tail.log10();
    }
    // Mills-ratio expansion: 1 − Φ(z) ≈ φ(z)/z · (1 − 1/z² + 3/z⁴ − 15/z⁶).
    let z2 = z * z;
    let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
    let ln = -0.5 * z2 - z.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln();
    ln / std::f64::consts::LN_10
}

fn right_tail(auc: f64, ties: &TieStructure) -> Result<f64> {
    let var = phi_squared(ties)?;
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::DegenerateNull);
    }
    let z = (auc - 0.5) / var.sqrt();
    Ok((1.0 - normal_cdf(z)).clamp(0.0, 1.0))
}

/// `1 − Φ((auc − 0.5)/φ)`: p-value of the observed AUC against the normal
/// approximation to the record-wise label-shuffle null.
pub fn auc_analytic_pvalue(observed_auc: AucValue, ties: &TieStructure) -> Result<f64> {
    right_tail(observed_auc.value(), ties)
}

/// The same right tail evaluated at the median of a disease-recognition null.
/// A fast screen for identity confounding; not a calibrated test.
pub fn pseudo_pvalue(median_null_auc: AucValue, ties: &TieStructure) -> Result<f64> {
    right_tail(median_null_auc.value(), ties)
}

/// z-score of an AUC under the normal null, for log-space reporting.
pub fn auc_z_score(auc: AucValue, ties: &TieStructure) -> Result<f64> {
    let var = phi_squared(ties)?;
    if var <= 0.0 {
        return Err(Error::DegenerateNull);
    }
    Ok((auc.value() - 0.5) / var.sqrt())
}

/// ROC curve vertices `(fpr, tpr)` from (0,0) to (1,1); tied scores move
/// both coordinates in one step.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (n_neg, n_pos) = class_counts(scores, labels)?;
    let mut order = ascending(scores);
    order.reverse();
    let mut points = vec![(0.0, 0.0)];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(points)
}

/// Median with the average of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}
