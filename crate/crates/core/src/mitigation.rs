//! Comparator bias-mitigation methods: under-blindness, reweighing and
//! equalized-odds post-processing of binary predictions.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::fairness::{Grouping, Rates};
use crate::glm::{fit_weighted_logistic, FitConfig, FittedModel};
use crate::seed;

/// Refit with every sensitive feature removed.
pub fn under_blindness(train: &TabularDataset, sensitive: &[String], fit: &FitConfig) -> Result<FittedModel> {
    let removed: BTreeSet<String> = sensitive.iter().cloned().collect();
    fit_weighted_logistic(train, None, &removed, fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweighCell {
    pub group: String,
    pub outcome: u8,
    pub count: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweighTable {
    pub attributes: Vec<String>,
    pub cells: Vec<ReweighCell>,
}

impl ReweighTable {
    pub fn weight(&self, group: &str, outcome: u8) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.group == group && c.outcome == outcome)
            .map(|c| c.weight)
    }
}

/// Cell weights `w(g, y) = (n_g * n_y / n) / n_gy` that make group and
/// outcome independent in the weighted sample. With several attributes the
/// group is their joint label.
pub fn reweigh_weights(train: &TabularDataset, attributes: &[String]) -> Result<(ReweighTable, Vec<f64>)> {
    if attributes.is_empty() {
        return Err(Error::InvalidArgument("no reweighing attributes".into()));
    }
    let columns: Vec<&[String]> = attributes
        .iter()
        .map(|a| {
            train
                .sensitive_labels(a)
                .ok_or_else(|| Error::InvalidArgument(format!("`{a}` is not a sensitive feature")))
        })
        .collect::<Result<_>>()?;
    let labels: Vec<String> = (0..train.n_rows())
        .map(|i| columns.iter().map(|c| c[i].as_str()).collect::<Vec<_>>().join("&"))
        .collect();
    reweigh_labels(&labels, train.outcome(), attributes)
}

pub fn reweigh_labels(groups: &[String], outcome: &[u8], attributes: &[String]) -> Result<(ReweighTable, Vec<f64>)> {
    let n = outcome.len();
    if n == 0 || groups.len() != n {
        return Err(Error::InvalidArgument("groups/outcome empty or mismatched".into()));
    }
    let mut cell: BTreeMap<(&str, u8), usize> = BTreeMap::new();
    let mut by_group: BTreeMap<&str, usize> = BTreeMap::new();
    let mut by_y = [0usize; 2];
    for (g, &y) in groups.iter().zip(outcome) {
        *cell.entry((g.as_str(), y)).or_default() += 1;
        *by_group.entry(g.as_str()).or_default() += 1;
        by_y[y as usize] += 1;
    }
    let mut cells = Vec::new();
    for (&g, &ng) in &by_group {
        for y in 0..2u8 {
            let ngy = cell.get(&(g, y)).copied().unwrap_or(0);
            if ngy == 0 {
                return Err(Error::EmptyCell {
                    group: g.to_string(),
                    outcome: y,
                });
            }
            cells.push(ReweighCell {
                group: g.to_string(),
                outcome: y,
                count: ngy,
                weight: (ng as f64 * by_y[y as usize] as f64 / n as f64) / ngy as f64,
            });
        }
    }
    let table = ReweighTable {
        attributes: attributes.to_vec(),
        cells,
    };
    let weights = groups
        .iter()
        .zip(outcome)
        .map(|(g, &y)| table.weight(g, y).expect("cell exists"))
        .collect();
    Ok((table, weights))
}

/// Mixing probabilities of one group: `p0 = P(out=1 | in=0)`, `p1 = P(out=1 | in=1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMix {
    pub p0: f64,
    pub p1: f64,
}

impl GroupMix {
    /// Expected (TPR, FPR) after mixing a base predictor with rates `base`.
    pub fn apply_rates(&self, base: Rates) -> Rates {
        Rates {
            tpr: self.p1 * base.tpr + self.p0 * (1.0 - base.tpr),
            fpr: self.p1 * base.fpr + self.p0 * (1.0 - base.fpr),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingPolicy {
    pub groups: BTreeMap<String, GroupMix>,
    pub target: Rates,
    /// Base rates per group on the fitting split.
    pub base: BTreeMap<String, Rates>,
    pub expected_error: f64,
}

type Point = (f64, f64); // (fpr, tpr)

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise convex hull (monotone chain).
fn hull(mut pts: Vec<Point>) -> Vec<Point> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Clip `subject` by convex CCW polygon `clip` (Sutherland-Hodgman).
fn clip_polygon(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        let inside = |p: Point| cross(a, b, p) >= -1e-12;
        let intersect = |p: Point, q: Point| {
            let (d1, d2) = (cross(a, b, p), cross(a, b, q));
            let t = d1 / (d1 - d2);
            (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
        };
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            match (inside(p), inside(q)) {
                (true, true) => out.push(q),
                (true, false) => out.push(intersect(p, q)),
                (false, true) => {
                    out.push(intersect(p, q));
                    out.push(q);
                }
                (false, false) => {}
            }
        }
        if out.is_empty() {
            break;
        }
    }
    out
}

/// Solve `p1 * r + p0 * (1 - r) = target` for both rates of a group.
fn solve_mix(base: Rates, target: Rates) -> GroupMix {
    let det = base.tpr - base.fpr;
    if det.abs() < 1e-12 {
        // Degenerate base predictor: only the diagonal is reachable.
        let t = 0.5 * (target.tpr + target.fpr);
        return GroupMix { p0: t, p1: t };
    }
    // p1 - p0 = (T - F) / det ; p0 = T - (p1 - p0) * tpr
    let diff = (target.tpr - target.fpr) / det;
    let p0 = target.tpr - diff * base.tpr;
    let clamp = |v: f64| if v.abs() < 1e-12 { 0.0 } else if (v - 1.0).abs() < 1e-12 { 1.0 } else { v };
    GroupMix {
        p0: clamp(p0),
        p1: clamp(p0 + diff),
    }
}

/// Fit group mixing probabilities so every group reaches the same expected
/// (TPR, FPR), minimizing the expected 0/1 error on the fitting split.
///
/// Each group's achievable rates form the parallelogram with corners
/// (0,0), (FPR_g, TPR_g), (1-FPR_g, 1-TPR_g), (1,1). The common target lies
/// in their intersection and the objective is linear in the target, so the
/// LP optimum is attained at a vertex of the intersection polygon.
pub fn eo_postprocess_fit(predicted: &[bool], labels: &[bool], grouping: &Grouping) -> Result<MixingPolicy> {
    if predicted.len() != labels.len() || labels.len() != grouping.n_rows() {
        return Err(Error::InvalidArgument("predictions, labels and groups differ in length".into()));
    }
    if grouping.groups.len() < 2 {
        return Err(Error::Infeasible("need at least two groups".into()));
    }
    let mut counts = vec![[0usize; 4]; grouping.groups.len()]; // tp, fn, fp, tn
    for ((&p, &y), &g) in predicted.iter().zip(labels).zip(&grouping.membership) {
        counts[g][match (y, p) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        }] += 1;
    }
    let mut base = BTreeMap::new();
    let mut region: Option<Vec<Point>> = None;
    for (name, [tp, fn_, fp, tn]) in grouping.groups.iter().zip(&counts) {
        let (pos, neg) = (tp + fn_, fp + tn);
        if pos == 0 || neg == 0 {
            return Err(Error::Infeasible(format!("group `{name}` lacks positives or negatives")));
        }
        let r = Rates {
            tpr: *tp as f64 / pos as f64,
            fpr: *fp as f64 / neg as f64,
        };
        base.insert(name.clone(), r);
        let poly = hull(vec![(0.0, 0.0), (r.fpr, r.tpr), (1.0 - r.fpr, 1.0 - r.tpr), (1.0, 1.0)]);
        region = Some(match region {
            None => poly,
            Some(acc) if poly.len() < 3 => {
                // Degenerate (segment) region: keep the points of it inside `acc`.
                if acc.len() < 3 {
                    poly
                } else {
                    poly.into_iter().filter(|&p| (0..acc.len()).all(|i| cross(acc[i], acc[(i + 1) % acc.len()], p) >= -1e-12)).collect()
                }
            }
            Some(acc) if acc.len() < 3 => acc
                .into_iter()
                .filter(|&p| (0..poly.len()).all(|i| cross(poly[i], poly[(i + 1) % poly.len()], p) >= -1e-12))
                .collect(),
            Some(acc) => clip_polygon(&acc, &poly),
        });
    }
    let region = region.unwrap_or_default();
    if region.is_empty() {
        return Err(Error::Infeasible("group rate regions do not intersect".into()));
    }
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|&&y| y).count() as f64;
    let neg = n - pos;
    let error = |(fpr, tpr): Point| (pos * (1.0 - tpr) + neg * fpr) / n;
    // Ties go to the vertex with the larger TPR, then smaller FPR.
    let best = region
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let (ea, eb) = (error(a), error(b));
            if (ea - eb).abs() <= 1e-12 {
                b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0))
            } else {
                ea.total_cmp(&eb)
            }
        })
        .expect("nonempty region");
    let target = Rates {
        tpr: best.1,
        fpr: best.0,
    };
    let groups = base.iter().map(|(g, &r)| (g.clone(), solve_mix(r, target))).collect();
    Ok(MixingPolicy {
        groups,
        target,
        base,
        expected_error: error(best),
    })
}

/// Randomize predictions per row; row `i` uses the stream keyed by `(seed, i)`.
pub fn eo_postprocess_apply(policy: &MixingPolicy, predicted: &[bool], groups: &[String], seed: u64) -> Result<Vec<bool>> {
    if predicted.len() != groups.len() {
        return Err(Error::InvalidArgument("predictions and groups differ in length".into()));
    }
    predicted
        .iter()
        .zip(groups)
        .enumerate()
        .map(|(i, (&p, g))| {
            let mix = policy.groups.get(g).ok_or_else(|| Error::UnknownGroup(g.clone()))?;
            let prob = if p { mix.p1 } else { mix.p0 };
            let u: f64 = seed::rng(seed, &[seed::TAG_POSTPROCESS, i as u64]).random();
            Ok(u < prob)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn independent_data_gives_unit_weights() {
        let groups: Vec<String> = ["a", "a", "b", "b"].iter().map(|s| s.to_string()).collect();
        let (_, w) = reweigh_labels(&groups, &[0, 1, 0, 1], &["g".into()]).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn documented_cell_weight() {
        // P(a) = 0.5, P(y=1) = 0.5, P(a, 1) = 0.4
        let mut groups = Vec::new();
        let mut y = Vec::new();
        for (g, yy, n) in [("a", 1u8, 4), ("a", 0, 1), ("b", 1, 1), ("b", 0, 4)] {
            for _ in 0..n {
                groups.push(g.to_string());
                y.push(yy);
            }
        }
        let (t, _) = reweigh_labels(&groups, &y, &["g".into()]).unwrap();
        assert!((t.weight("a", 1).unwrap() - 0.625).abs() < 1e-15);
    }

    #[test]
    fn empty_cell_is_an_error() {
        let groups: Vec<String> = ["a", "a", "b"].iter().map(|s| s.to_string()).collect();
        assert!(matches!(
            reweigh_labels(&groups, &[0, 1, 0], &["g".into()]),
            Err(Error::EmptyCell { .. })
        ));
    }

    #[test]
    fn equal_groups_keep_identity_policy() {
        // both groups: TPR 0.8, FPR 0.2
        let mut pred = Vec::new();
        let mut y = Vec::new();
        let mut g = Vec::new();
        for name in ["a", "b"] {
            for (p, l, n) in [(true, true, 8), (false, true, 2), (true, false, 2), (false, false, 8)] {
                for _ in 0..n {
                    pred.push(p);
                    y.push(l);
                    g.push(name.to_string());
                }
            }
        }
        let grouping = Grouping::from_labels("g", &g);
        let policy = eo_postprocess_fit(&pred, &y, &grouping).unwrap();
        for mix in policy.groups.values() {
            assert_eq!((mix.p0, mix.p1), (0.0, 1.0));
        }
        let out = eo_postprocess_apply(&policy, &pred, &g, 3).unwrap();
        assert_eq!(out, pred);
        assert!(eo_postprocess_apply(&policy, &pred[..1], &["zz".to_string()], 3).is_err());
    }

    #[test]
    fn hull_of_parallelogram() {
        let h = hull(vec![(0.0, 0.0), (0.2, 0.8), (0.8, 0.2), (1.0, 1.0)]);
        assert_eq!(h.len(), 4);
    }
}
