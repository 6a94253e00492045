//! Discrimination metrics: ROC AUC and Youden-optimal thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::MetricUndefined("both classes must be present".into()));
    }
    Ok((pos, neg))
}

/// Mann-Whitney estimate of P(score+ > score-), ties counted one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YoudenPoint {
    pub threshold: f64,
    pub j: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Threshold maximizing sensitivity + specificity - 1 for the rule `score >= t`.
///
/// Candidates are the smallest score (everything positive), the midpoints
/// between adjacent distinct scores, and the next float above the largest
/// score (everything negative). Ties in J go to the larger threshold; J is
/// compared in exact integer arithmetic.
pub fn youden_threshold(scores: &[f64], labels: &[bool]) -> Result<YoudenPoint> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sweep thresholds upward; below the first score every row is positive.
    let (mut tp, mut tn) = (pos as i128, 0i128);
    let (p, n) = (pos as i128, neg as i128);
    let score = |tp: i128, tn: i128| tp * n + tn * p; // (J + 1) * p * n
    let mut best = (score(tp, tn), pairs[0].0, tp, tn);
    let mut i = 0;
    while i < pairs.len() {
        let v = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == v {
            if pairs[i].1 {
                tp -= 1;
            } else {
                tn += 1;
            }
            i += 1;
        }
        let t = if i < pairs.len() {
            v + (pairs[i].0 - v) / 2.0
        } else {
            v.next_up()
        };
        let s = score(tp, tn);
        if s >= best.0 {
            best = (s, t, tp, tn);
        }
    }
    let (_, threshold, tp, tn) = best;
    let sensitivity = tp as f64 / pos as f64;
    let specificity = tn as f64 / neg as f64;
    Ok(YoudenPoint {
        threshold,
        j: sensitivity + specificity - 1.0,
        sensitivity,
        specificity,
    })
}

/// Sensitivity and specificity of binary predictions.
pub fn sensitivity_specificity(predicted: &[bool], labels: &[bool]) -> Result<(f64, f64)> {
    if predicted.len() != labels.len() {
        return Err(Error::InvalidArgument("prediction/label length mismatch".into()));
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::MetricUndefined("both classes must be present".into()));
    }
    let tp = predicted.iter().zip(labels).filter(|(&p, &l)| p && l).count();
    let tn = predicted.iter().zip(labels).filter(|(&p, &l)| !p && !l).count();
    Ok((tp as f64 / pos as f64, tn as f64 / neg as f64))
}
