//! Bootstrap confidence intervals and paired bootstrap difference tests.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::fairness::{fairness_metrics, GroupDefinition, Grouping};
use crate::metrics::{roc_auc, sensitivity_specificity};
use crate::{par, seed};

/// Scores, thresholded predictions and true labels of one method on one split.
///
/// Methods that only emit labels use the labels themselves as scores.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInput {
    pub scores: Vec<f64>,
    pub predicted: Vec<bool>,
    pub labels: Vec<bool>,
}

impl EvalInput {
    pub fn from_scores(scores: Vec<f64>, threshold: f64, labels: Vec<bool>) -> Self {
        let predicted = scores.iter().map(|&s| s >= threshold).collect();
        Self {
            scores,
            predicted,
            labels,
        }
    }

    pub fn from_labels(predicted: Vec<bool>, labels: Vec<bool>) -> Self {
        Self {
            scores: predicted.iter().map(|&p| f64::from(u8::from(p))).collect(),
            predicted,
            labels,
        }
    }

    fn check(&self) -> Result<()> {
        if self.scores.len() != self.labels.len() || self.predicted.len() != self.labels.len() {
            return Err(Error::InvalidArgument("scores, predictions and labels differ in length".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: Option<f64>,
    pub n_boot: usize,
    pub redraws: usize,
    pub metrics: Vec<MetricRow>,
    /// Per-resample metric values, in resample order.
    #[serde(skip)]
    pub streams: BTreeMap<String, Vec<f64>>,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<&MetricRow> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

/// Type-7 (linear interpolation) quantile of sorted finite data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn percentile_ci(stream: &[f64]) -> (f64, f64) {
    let mut v: Vec<f64> = stream.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(f64::total_cmp);
    (quantile(&v, 0.025), quantile(&v, 0.975))
}

struct Metrics {
    values: Vec<(&'static str, f64)>,
}

fn point_metrics(input: &EvalInput, idx: Option<&[usize]>, groups: Option<&GroupDefinition>) -> Result<Metrics> {
    let pick = |v: &[bool]| -> Vec<bool> { idx.map_or_else(|| v.to_vec(), |ix| ix.iter().map(|&i| v[i]).collect()) };
    let scores: Vec<f64> = idx.map_or_else(|| input.scores.clone(), |ix| ix.iter().map(|&i| input.scores[i]).collect());
    let labels = pick(&input.labels);
    let predicted = pick(&input.predicted);
    let auc = roc_auc(&scores, &labels)?;
    let (sens, spec) = sensitivity_specificity(&predicted, &labels)?;
    let mut values = vec![("auc", auc), ("sensitivity", sens), ("specificity", spec)];
    if let Some(g) = groups {
        let resampled;
        let g = match idx {
            None => g,
            Some(ix) => {
                resampled = GroupDefinition {
                    groupings: g
                        .groupings
                        .iter()
                        .map(|gr| Grouping {
                            membership: ix.iter().map(|&i| gr.membership[i]).collect(),
                            ..gr.clone()
                        })
                        .collect(),
                    ..g.clone()
                };
                &resampled
            }
        };
        match fairness_metrics(&predicted, &labels, g) {
            Ok(m) => values.extend([("eop", m.eop), ("eod", m.eod), ("ber", m.ber)]),
            Err(_) => values.extend([("eop", f64::NAN), ("eod", f64::NAN), ("ber", f64::NAN)]),
        }
    }
    Ok(Metrics { values })
}

/// Percentile 95% CIs over `n_boot` row resamples with replacement.
///
/// Resample `b` draws from the stream keyed by `(seed, b, attempt)`; a
/// resample lacking either class is redrawn with the next attempt counter.
/// Two methods evaluated on the same labels with the same seed see identical
/// resamples, which makes their streams paired.
pub fn bootstrap_eval(
    input: &EvalInput,
    groups: Option<&GroupDefinition>,
    threshold: Option<f64>,
    n_boot: usize,
    seed: u64,
) -> Result<EvalReport> {
    input.check()?;
    if n_boot < 100 {
        return Err(Error::InvalidArgument(format!("n_boot = {n_boot} < 100")));
    }
    let point = point_metrics(input, None, groups)?;
    let n = input.labels.len();
    let budget = 10 * n_boot;
    let draws = par::map_range(n_boot, |b| -> Result<(usize, Metrics)> {
        for attempt in 0..=budget {
            let mut rng = seed::rng(seed, &[seed::TAG_BOOTSTRAP, b as u64, attempt as u64]);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let pos = idx.iter().filter(|&&i| input.labels[i]).count();
            if pos == 0 || pos == n {
                continue;
            }
            return Ok((attempt, point_metrics(input, Some(&idx), groups)?));
        }
        Err(Error::RedrawBudget(budget))
    });
    let mut redraws = 0;
    let mut streams: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for d in draws {
        let (attempts, m) = d?;
        redraws += attempts;
        for (k, v) in m.values {
            streams.entry(k.to_string()).or_default().push(v);
        }
    }
    if redraws > budget {
        return Err(Error::RedrawBudget(redraws));
    }
    let metrics = point
        .values
        .iter()
        .map(|&(k, p)| {
            let (lo, hi) = percentile_ci(&streams[k]);
            MetricRow {
                metric: k.to_string(),
                point: p,
                lo,
                hi,
            }
        })
        .collect();
    Ok(EvalReport {
        threshold,
        n_boot,
        redraws,
        metrics,
        streams,
    })
}

/// Two-sided paired t-test on per-resample differences `a - b`.
/// Pairs with a non-finite member are skipped.
pub fn bootstrap_diff_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument("metric streams differ in length".into()));
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| x - y)
        .collect();
    if d.len() < 2 {
        return Err(Error::InvalidArgument("need at least two paired values".into()));
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 { 1.0 } else { 0.0 });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}
