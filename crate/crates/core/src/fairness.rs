//! Separation-based fairness metrics, the Fairness Ranking Index and cloud
//! ranking.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::glm::Design;
use crate::par;
use crate::sampler::ModelCloud;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupMode {
    #[default]
    PerAttribute,
    Intersectional,
}

/// One partition of the evaluation rows into named groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grouping {
    pub name: String,
    pub groups: Vec<String>,
    pub membership: Vec<usize>,
    /// Groups folded into "others" for being smaller than the minimum size.
    pub merged: Vec<String>,
}

impl Grouping {
    /// Group rows by label, groups ordered by name.
    pub fn from_labels(name: &str, labels: &[String]) -> Self {
        let groups: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let membership = labels
            .iter()
            .map(|l| groups.binary_search(l).expect("label present"))
            .collect();
        Self {
            name: name.to_string(),
            groups,
            membership,
            merged: Vec::new(),
        }
    }

    /// Fold groups with fewer than `min_size` rows into "others".
    pub fn merge_small(name: &str, labels: &[String], min_size: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for l in labels {
            *counts.entry(l.as_str()).or_default() += 1;
        }
        let small: BTreeSet<&str> = counts
            .iter()
            .filter(|(_, &n)| n < min_size)
            .map(|(&l, _)| l)
            .collect();
        if small.is_empty() {
            return Self::from_labels(name, labels);
        }
        let others = counts
            .keys()
            .find(|k| k.eq_ignore_ascii_case("others"))
            .map_or("others".to_string(), |k| k.to_string());
        let relabeled: Vec<String> = labels
            .iter()
            .map(|l| if small.contains(l.as_str()) { others.clone() } else { l.clone() })
            .collect();
        let mut g = Self::from_labels(name, &relabeled);
        g.merged = small.into_iter().filter(|s| *s != others).map(str::to_string).collect();
        if !g.merged.is_empty() {
            tracing::info!(grouping = name, merged = ?g.merged, "merged small groups into `{others}`");
        }
        g
    }

    pub fn n_rows(&self) -> usize {
        self.membership.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDefinition {
    pub mode: GroupMode,
    pub attributes: Vec<String>,
    pub min_group_size: usize,
    pub groupings: Vec<Grouping>,
}

impl GroupDefinition {
    pub fn build(data: &TabularDataset, attributes: &[String], mode: GroupMode, min_group_size: usize) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::InvalidArgument("no group attributes".into()));
        }
        let columns: Vec<&[String]> = attributes
            .iter()
            .map(|a| {
                data.sensitive_labels(a)
                    .ok_or_else(|| Error::InvalidArgument(format!("`{a}` is not a sensitive feature")))
            })
            .collect::<Result<_>>()?;
        let groupings = match mode {
            GroupMode::PerAttribute => attributes
                .iter()
                .zip(&columns)
                .map(|(a, labels)| Grouping::merge_small(a, labels, min_group_size))
                .collect(),
            GroupMode::Intersectional => {
                let joint: Vec<String> = (0..data.n_rows())
                    .map(|i| columns.iter().map(|c| c[i].as_str()).collect::<Vec<_>>().join("&"))
                    .collect();
                vec![Grouping::merge_small(&attributes.join("&"), &joint, min_group_size)]
            }
        };
        Ok(Self {
            mode,
            attributes: attributes.to_vec(),
            min_group_size,
            groupings,
        })
    }
}

/// True/false positive rates of one group; TNR and FNR are their complements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tpr: f64,
    pub fpr: f64,
}

impl Rates {
    pub fn tnr(&self) -> f64 {
        1.0 - self.fpr
    }

    pub fn fnr(&self) -> f64 {
        1.0 - self.tpr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub group: String,
    pub n: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub tpr: f64,
    pub fpr: f64,
    pub tnr: f64,
    pub fnr: f64,
    /// False when the group lacks a positive or a negative label.
    pub valid: bool,
}

impl GroupRates {
    pub fn rates(&self) -> Rates {
        Rates {
            tpr: self.tpr,
            fpr: self.fpr,
        }
    }
}

/// Confusion rates per group.
pub fn group_rates(predicted: &[bool], labels: &[bool], grouping: &Grouping) -> Result<Vec<GroupRates>> {
    if grouping.groups.is_empty() {
        return Err(Error::InvalidArgument("empty group set".into()));
    }
    if predicted.len() != labels.len() || labels.len() != grouping.n_rows() {
        return Err(Error::InvalidArgument("predictions, labels and groups differ in length".into()));
    }
    let mut counts = vec![[0usize; 4]; grouping.groups.len()];
    for ((&p, &y), &g) in predicted.iter().zip(labels).zip(&grouping.membership) {
        let k = match (p, y) {
            (true, true) => 0,
            (true, false) => 1,
            (false, false) => 2,
            (false, true) => 3,
        };
        counts[g][k] += 1;
    }
    Ok(grouping
        .groups
        .iter()
        .zip(counts)
        .map(|(name, [tp, fp, tn, fn_])| {
            let pos = tp + fn_;
            let neg = fp + tn;
            let ratio = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
            GroupRates {
                group: name.clone(),
                n: pos + neg,
                tp,
                fp,
                tn,
                fn_,
                tpr: ratio(tp, pos),
                fpr: ratio(fp, neg),
                tnr: ratio(tn, neg),
                fnr: ratio(fn_, pos),
                valid: pos > 0 && neg > 0,
            }
        })
        .collect())
}

fn range(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi - lo
}

fn need_two(rates: &[Rates]) -> Result<()> {
    if rates.len() < 2 {
        return Err(Error::MetricUndefined(format!("{} valid group(s); need at least 2", rates.len())));
    }
    Ok(())
}

/// Range of true positive rates.
pub fn equal_opportunity(rates: &[Rates]) -> Result<f64> {
    need_two(rates)?;
    Ok(range(rates.iter().map(|r| r.tpr)))
}

/// Larger of the TPR range and the FPR range.
pub fn equalized_odds(rates: &[Rates]) -> Result<f64> {
    need_two(rates)?;
    Ok(range(rates.iter().map(|r| r.tpr)).max(range(rates.iter().map(|r| r.fpr))))
}

/// Range of FPR + FNR.
pub fn ber_equality(rates: &[Rates]) -> Result<f64> {
    need_two(rates)?;
    Ok(range(rates.iter().map(|r| r.fpr + r.fnr())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Eop,
    Eod,
    Ber,
}

impl MetricName {
    pub const DEFAULT_ORDER: [MetricName; 3] = [MetricName::Eop, MetricName::Eod, MetricName::Ber];

    pub fn key(&self) -> &'static str {
        match self {
            MetricName::Eop => "eop",
            MetricName::Eod => "eod",
            MetricName::Ber => "ber",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FairnessMetrics {
    pub eop: f64,
    pub eod: f64,
    pub ber: f64,
}

impl FairnessMetrics {
    pub fn from_rates(rates: &[Rates]) -> Result<Self> {
        Ok(Self {
            eop: equal_opportunity(rates)?,
            eod: equalized_odds(rates)?,
            ber: ber_equality(rates)?,
        })
    }

    pub fn get(&self, m: MetricName) -> f64 {
        match m {
            MetricName::Eop => self.eop,
            MetricName::Eod => self.eod,
            MetricName::Ber => self.ber,
        }
    }

    pub fn ordered(&self, order: &[MetricName]) -> Vec<f64> {
        order.iter().map(|&m| self.get(m)).collect()
    }

    fn max(self, other: Self) -> Self {
        Self {
            eop: self.eop.max(other.eop),
            eod: self.eod.max(other.eod),
            ber: self.ber.max(other.ber),
        }
    }
}

/// Metrics per grouping, reduced by max across groupings. Groupings with
/// fewer than two valid groups are skipped; if none remain the metrics are
/// undefined.
pub fn fairness_metrics(predicted: &[bool], labels: &[bool], groups: &GroupDefinition) -> Result<FairnessMetrics> {
    let mut out: Option<FairnessMetrics> = None;
    let mut last_err = None;
    for g in &groups.groupings {
        let rates: Vec<Rates> = group_rates(predicted, labels, g)?
            .iter()
            .filter(|r| r.valid)
            .map(GroupRates::rates)
            .collect();
        match FairnessMetrics::from_rates(&rates) {
            Ok(m) => out = Some(out.map_or(m, |o| o.max(m))),
            Err(e) => last_err = Some(e),
        }
    }
    out.ok_or_else(|| last_err.unwrap_or_else(|| Error::MetricUndefined("no groupings".into())))
}

pub const DEFAULT_RIDGE: f64 = 1e-9;

/// Fairness Ranking Index: `1 / sum_j (m_j + d)(m_{j+1} + d)` with cyclic wrap.
pub fn fri(metrics: &[f64], ridge: f64) -> Result<f64> {
    if metrics.len() < 2 {
        return Err(Error::InvalidArgument(format!("FRI needs >= 2 metrics, got {}", metrics.len())));
    }
    if let Some(&m) = metrics.iter().find(|&&m| !(m >= 0.0)) {
        return Err(Error::NegativeMetric(m));
    }
    let n = metrics.len();
    let mut terms: Vec<f64> = (0..n)
        .map(|j| (metrics[j] + ridge) * (metrics[(j + 1) % n] + ridge))
        .collect();
    // Summing in sorted order makes rotations and reflections bit-identical.
    terms.sort_by(f64::total_cmp);
    Ok(1.0 / terms.iter().sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankConfig {
    pub metric_order: Vec<MetricName>,
    pub ridge: f64,
    pub group_mode: GroupMode,
    pub min_group_size: usize,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            metric_order: MetricName::DEFAULT_ORDER.to_vec(),
            ridge: DEFAULT_RIDGE,
            group_mode: GroupMode::PerAttribute,
            min_group_size: 30,
        }
    }
}

/// Ordering key for ranking: larger FRI first, then smaller metric sum,
/// smaller loss, smaller id.
fn rank_order(a: (f64, f64, f64, usize), b: (f64, f64, f64, usize)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.total_cmp(&b.1))
        .then(a.2.total_cmp(&b.2))
        .then(a.3.cmp(&b.3))
}

/// Score every candidate on the validation split and assign ranks 1..N.
/// Candidates whose metrics fail are flagged and ranked after all others.
pub fn rank_cloud(cloud: &mut ModelCloud, valid: &TabularDataset, groups: &GroupDefinition, config: &RankConfig) -> Result<()> {
    if config.metric_order.len() < 2 {
        return Err(Error::InvalidArgument("need at least two metrics".into()));
    }
    let labels: Vec<bool> = valid.outcome().iter().map(|&y| y == 1).collect();
    let designs: Vec<Option<Design>> = cloud
        .cases
        .iter()
        .map(|c| c.optimum.as_ref().map(|m| Design::new(valid, &m.columns)).transpose())
        .collect::<Result<_>>()?;

    let scored = par::map_slice(&cloud.candidates, |c| -> Result<(FairnessMetrics, f64)> {
        let design = designs[c.case]
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("case {} has no optimum", c.case)))?;
        let predicted: Vec<bool> = design.probabilities(&c.beta)?.iter().map(|&p| p >= c.threshold).collect();
        let m = fairness_metrics(&predicted, &labels, groups)?;
        let f = fri(&m.ordered(&config.metric_order), config.ridge)?;
        Ok((m, f))
    });

    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (i, (c, s)) in cloud.candidates.iter_mut().zip(scored).enumerate() {
        match s {
            Ok((m, f)) => {
                c.fairness = config.metric_order.iter().map(|&k| (k.key().to_string(), m.get(k))).collect();
                c.fri = Some(f);
                let sum: f64 = m.ordered(&config.metric_order).iter().sum();
                ok.push((f, sum, c.loss, c.id, i));
            }
            Err(e) => {
                c.fairness.clear();
                c.fri = None;
                c.flag = Some(format!("fairness: {e}"));
                failed.push((c.id, i));
            }
        }
    }
    ok.sort_by(|a, b| rank_order((a.0, a.1, a.2, a.3), (b.0, b.1, b.2, b.3)));
    failed.sort();
    let order = ok.iter().map(|t| t.4).chain(failed.iter().map(|t| t.1));
    for (r, i) in order.enumerate() {
        cloud.candidates[i].rank = Some(r + 1);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bands {
    pub top: usize,
    pub bottom: usize,
}

impl Default for Bands {
    fn default() -> Self {
        Self { top: 10, bottom: 100 }
    }
}

impl Bands {
    /// Bands for a cloud of `n`; below `2 * top + bottom` both shrink in proportion.
    pub fn resolve(&self, n: usize) -> Bands {
        let full = 2 * self.top + self.bottom;
        if n >= full || full == 0 {
            return *self;
        }
        let f = n as f64 / full as f64;
        let top = ((self.top as f64 * f).round() as usize).max(1).min(n);
        let bottom = ((self.bottom as f64 * f).round() as usize).min(n - top);
        Bands { top, bottom }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulationRow {
    pub case: usize,
    pub label: String,
    pub removed: Vec<String>,
    pub eligible: bool,
    pub candidates: usize,
    pub top: usize,
    pub middle: usize,
    pub bottom: usize,
    pub best_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionTabulation {
    pub n_candidates: usize,
    pub bands: Bands,
    pub rows: Vec<TabulationRow>,
}

/// Per exclusion case: how many candidates fall in the top band, the middle
/// and the bottom band, and the best rank reached.
pub fn exclusion_tabulation(cloud: &ModelCloud, bands: Bands) -> Result<ExclusionTabulation> {
    let n = cloud.candidates.len();
    let b = bands.resolve(n);
    let mut rows: Vec<TabulationRow> = cloud
        .cases
        .iter()
        .map(|c| TabulationRow {
            case: c.index,
            label: c.label(),
            removed: c.removed.iter().cloned().collect(),
            eligible: c.eligible,
            candidates: 0,
            top: 0,
            middle: 0,
            bottom: 0,
            best_rank: None,
        })
        .collect();
    for c in &cloud.candidates {
        let rank = c
            .rank
            .ok_or_else(|| Error::InvalidArgument(format!("candidate {} is unranked", c.id)))?;
        let row = &mut rows[c.case];
        row.candidates += 1;
        if rank <= b.top {
            row.top += 1;
        } else if rank > n - b.bottom {
            row.bottom += 1;
        } else {
            row.middle += 1;
        }
        row.best_rank = Some(row.best_rank.map_or(rank, |r| r.min(rank)));
    }
    Ok(ExclusionTabulation {
        n_candidates: n,
        bands: b,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRow {
    pub group: String,
    pub n: usize,
    pub tpr: f64,
    pub tnr: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeGap {
    pub attribute: String,
    pub delta_tpr: f64,
    pub delta_tnr: f64,
    pub groups: Vec<SubgroupRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupGapReport {
    pub rows: Vec<AttributeGap>,
}

impl SubgroupGapReport {
    /// Text rows: attribute, delta TPR, delta TNR.
    pub fn to_table(&self) -> String {
        let mut s = String::from("attribute\tdelta_tpr\tdelta_tnr\n");
        for r in &self.rows {
            s.push_str(&format!("{}\t{:.3}\t{:.3}\n", r.attribute, r.delta_tpr, r.delta_tnr));
        }
        s
    }
}

/// Max-minus-min of group TPR and TNR per grouping.
pub fn subgroup_gaps(predicted: &[bool], labels: &[bool], groups: &GroupDefinition) -> Result<SubgroupGapReport> {
    let rows = groups
        .groupings
        .iter()
        .map(|g| {
            let rates = group_rates(predicted, labels, g)?;
            let valid: Vec<&GroupRates> = rates.iter().filter(|r| r.valid).collect();
            if valid.len() < 2 {
                return Err(Error::MetricUndefined(format!("`{}` has fewer than 2 valid groups", g.name)));
            }
            Ok(AttributeGap {
                attribute: g.name.clone(),
                delta_tpr: range(valid.iter().map(|r| r.tpr)),
                delta_tnr: range(valid.iter().map(|r| r.tnr)),
                groups: rates
                    .iter()
                    .map(|r| SubgroupRow {
                        group: r.group.clone(),
                        n: r.n,
                        tpr: r.tpr,
                        tnr: r.tnr,
                        valid: r.valid,
                    })
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(SubgroupGapReport { rows })
}
