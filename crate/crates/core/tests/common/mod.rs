//! Fixtures and brute-force oracles shared by the integration tests.
//! Nothing here calls into the code under test except to build inputs.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use fairsel_core::data::{FeatureSpec, TabularDataset, Value};
use fairsel_core::glm::FittedModel;
use nalgebra::DMatrix;

pub fn one_feature(xs: &[f64], ys: &[u8]) -> TabularDataset {
    let rows: Vec<Vec<Value>> = xs.iter().map(|&x| vec![Value::Numeric(x)]).collect();
    TabularDataset::from_values(vec![FeatureSpec::numeric("x")], &rows, ys.to_vec()).unwrap()
}

/// Six rows, not separable.
pub const FIT_X: [f64; 6] = [-1.0, 0.5, 0.0, 1.0, 2.0, -0.5];
pub const FIT_Y: [u8; 6] = [0, 1, 1, 0, 1, 0];

pub fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Summed negative log-likelihood of a one-feature logistic model.
pub fn nll(b0: f64, b1: f64, xs: &[f64], ys: &[u8]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let p = sigmoid(b0 + b1 * x);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum()
}

/// Grid search at step 0.01 over [-5, 5]^2, refined at step 1e-4 in a
/// +-0.02 window around the coarse optimum (the loss is convex).
pub fn grid_search_fit(xs: &[f64], ys: &[u8]) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in -500..=500 {
        for j in -500..=500 {
            let (a, b) = (i as f64 * 0.01, j as f64 * 0.01);
            let l = nll(a, b, xs, ys);
            if l < best.0 {
                best = (l, a, b);
            }
        }
    }
    let (c0, c1) = (best.1, best.2);
    for i in -200..=200 {
        for j in -200..=200 {
            let (a, b) = (c0 + i as f64 * 1e-4, c1 + j as f64 * 1e-4);
            let l = nll(a, b, xs, ys);
            if l < best.0 {
                best = (l, a, b);
            }
        }
    }
    (best.1, best.2)
}

/// Inverse of the central-difference Hessian of the summed loss.
pub fn fd_hessian_inverse(b: [f64; 2], xs: &[f64], ys: &[u8]) -> DMatrix<f64> {
    let h = 1e-4;
    let f = |d0: f64, d1: f64| nll(b[0] + d0, b[1] + d1, xs, ys);
    let h00 = (f(h, 0.0) - 2.0 * f(0.0, 0.0) + f(-h, 0.0)) / (h * h);
    let h11 = (f(0.0, h) - 2.0 * f(0.0, 0.0) + f(0.0, -h)) / (h * h);
    let h01 = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4.0 * h * h);
    DMatrix::from_row_slice(2, 2, &[h00, h01, h01, h11]).try_inverse().unwrap()
}

/// Fraction of (positive, negative) pairs ordered correctly, ties one half.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// Exhaustive Youden scan: every threshold candidate is evaluated by
/// recounting the confusion table from scratch.
pub fn scan_youden(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let mut distinct: Vec<f64> = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut cands = vec![distinct[0]];
    for w in distinct.windows(2) {
        cands.push(w[0] + (w[1] - w[0]) / 2.0);
    }
    cands.push(distinct[distinct.len() - 1].next_up());
    let p = labels.iter().filter(|&&y| y).count() as i64;
    let n = labels.len() as i64 - p;
    let mut best: Option<(i64, f64)> = None;
    for &t in &cands {
        let tp = scores.iter().zip(labels).filter(|(&s, &y)| y && s >= t).count() as i64;
        let tn = scores.iter().zip(labels).filter(|(&s, &y)| !y && s < t).count() as i64;
        let key = tp * n + tn * p;
        match best {
            Some((k, bt)) if key < k || (key == k && t < bt) => {}
            _ => best = Some((key, t)),
        }
    }
    let (_, t) = best.unwrap();
    let tp = scores.iter().zip(labels).filter(|(&s, &y)| y && s >= t).count() as f64;
    let tn = scores.iter().zip(labels).filter(|(&s, &y)| !y && s < t).count() as f64;
    (t, tp / p as f64 + tn / n as f64 - 1.0)
}

/// Exact Shapley values of `f` at `x` over all coalitions, with absent
/// features averaged over the background rows.
pub fn coalition_shapley(f: &dyn Fn(&[f64]) -> f64, x: &[f64], background: &[Vec<f64>]) -> Vec<f64> {
    let d = x.len();
    let value = |mask: usize| -> f64 {
        background
            .iter()
            .map(|bg| {
                let z: Vec<f64> = (0..d).map(|j| if mask >> j & 1 == 1 { x[j] } else { bg[j] }).collect();
                f(&z)
            })
            .sum::<f64>()
            / background.len() as f64
    };
    let fact = |k: usize| (1..=k).product::<usize>() as f64;
    (0..d)
        .map(|j| {
            let mut phi = 0.0;
            for mask in 0..(1usize << d) {
                if mask >> j & 1 == 1 {
                    continue;
                }
                let s = mask.count_ones() as usize;
                let w = fact(s) * fact(d - s - 1) / fact(d);
                phi += w * (value(mask | 1 << j) - value(mask));
            }
            phi
        })
        .collect()
}

/// Brute-force equalized-odds post-processing over a 0.01 grid of mixing
/// probabilities per group. Returns the common (fpr, tpr) target of least
/// expected error.
///
/// `groups` holds (base tpr, base fpr, positives, negatives).
pub fn eo_grid_oracle(groups: &[(f64, f64, usize, usize)]) -> (f64, f64) {
    let step = 0.01;
    let grid = |tpr: f64, fpr: f64| -> Vec<(f64, f64)> {
        let mut v = Vec::new();
        for i in 0..=100 {
            for j in 0..=100 {
                let (p0, p1) = (i as f64 * step, j as f64 * step);
                v.push((p1 * fpr + p0 * (1.0 - fpr), p1 * tpr + p0 * (1.0 - tpr)));
            }
        }
        v
    };
    let cell = |(f, t): (f64, f64)| ((f / step).round() as i64, (t / step).round() as i64);
    type Cells = HashMap<(i64, i64), Vec<(f64, f64)>>;
    let others: Vec<Cells> = groups[1..]
        .iter()
        .map(|&(tpr, fpr, _, _)| {
            let mut m: Cells = HashMap::new();
            for p in grid(tpr, fpr) {
                m.entry(cell(p)).or_default().push(p);
            }
            m
        })
        .collect();
    let pos: usize = groups.iter().map(|g| g.2).sum();
    let neg: usize = groups.iter().map(|g| g.3).sum();
    let n = (pos + neg) as f64;
    let err = |(f, t): (f64, f64)| (pos as f64 * (1.0 - t) + neg as f64 * f) / n;
    let mut best = (f64::INFINITY, (0.0, 0.0));
    for p in grid(groups[0].0, groups[0].1) {
        let (ci, cj) = cell(p);
        let reachable = others.iter().all(|m| {
            (-1..=1).any(|di| {
                (-1..=1).any(|dj| {
                    m.get(&(ci + di, cj + dj))
                        .is_some_and(|v| v.iter().any(|q| (q.0 - p.0).abs() <= step && (q.1 - p.1).abs() <= step))
                })
            })
        });
        if reachable && err(p) < best.0 {
            best = (err(p), p);
        }
    }
    best.1
}

/// Per-group rates, metric triple and FRI computed directly from raw rows.
pub struct RankingRow {
    pub id: usize,
    pub fri: f64,
    pub sum: f64,
    pub loss: f64,
}

pub fn range(v: &[f64]) -> f64 {
    v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// (eop, eod, ber) for two or more groups.
pub fn metric_triple(pred: &[bool], y: &[bool], group: &[usize], n_groups: usize) -> (f64, f64, f64) {
    let mut tpr = Vec::new();
    let mut fpr = Vec::new();
    for g in 0..n_groups {
        let rows: Vec<usize> = (0..y.len()).filter(|&i| group[i] == g).collect();
        let p = rows.iter().filter(|&&i| y[i]).count() as f64;
        let n = rows.len() as f64 - p;
        tpr.push(rows.iter().filter(|&&i| y[i] && pred[i]).count() as f64 / p);
        fpr.push(rows.iter().filter(|&&i| !y[i] && pred[i]).count() as f64 / n);
    }
    let ber: Vec<f64> = tpr.iter().zip(&fpr).map(|(t, f)| f + (1.0 - t)).collect();
    (range(&tpr), range(&tpr).max(range(&fpr)), range(&ber))
}

pub fn brute_fri(m: &[f64], ridge: f64) -> f64 {
    let mut s = 0.0;
    for j in 0..m.len() {
        s += (m[j] + ridge) * (m[(j + 1) % m.len()] + ridge);
    }
    1.0 / s
}

/// Ranks by brute-force sort: FRI descending, metric sum, loss, id.
pub fn brute_ranks(rows: &[RankingRow]) -> BTreeMap<usize, usize> {
    let mut v: Vec<&RankingRow> = rows.iter().collect();
    v.sort_by(|a, b| {
        b.fri
            .partial_cmp(&a.fri)
            .unwrap()
            .then(a.sum.partial_cmp(&b.sum).unwrap())
            .then(a.loss.partial_cmp(&b.loss).unwrap())
            .then(a.id.cmp(&b.id))
    });
    v.iter().enumerate().map(|(r, row)| (row.id, r + 1)).collect()
}

pub fn model(columns: &[&str], beta: &[f64], removed: &[&str]) -> FittedModel {
    FittedModel {
        columns: columns.iter().map(|s| s.to_string()).collect(),
        beta: beta.to_vec(),
        covariance: DMatrix::identity(beta.len(), beta.len()),
        exclusion_case: removed.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
        train_loss: 0.5,
    }
}
