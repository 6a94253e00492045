//! Exclusion-case enumeration and rejection sampling of nearly-optimal
//! coefficient vectors.
//!
//! Each subset of the sensitive features defines an exclusion case with its
//! own optimum `beta*` and covariance `Sigma*`. A case is eligible when its
//! optimal training loss is within `(1 + eps0)` of the full model's. Eligible
//! cases are populated by drawing `k ~ U(u1, u2)` and
//! `beta ~ N(beta*, k Sigma*)`, keeping draws whose training loss is within
//! `(1 + eps0)` of the case optimum. Chaining the two bounds with
//! `(1 + eps0)^2 = 1 + eps` keeps every accepted model within `(1 + eps)` of
//! the full optimum.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::glm::{fit_weighted_logistic, Design, FitConfig, FittedModel};
use crate::metrics::youden_threshold;
use crate::{par, seed};

/// Draws evaluated per parallel batch before the sequential accept scan.
const BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub epsilon: f64,
    pub u1: f64,
    pub u2: f64,
    pub n_target_per_case: usize,
    pub max_draws_per_case: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            u1: 0.1,
            u2: 2.0,
            n_target_per_case: 200,
            max_draws_per_case: 20_000,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn epsilon_inner(&self) -> Result<f64> {
        epsilon_inner(self.epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        let eps0 = self.epsilon_inner()?;
        if !(self.epsilon > eps0 && eps0 > 0.0) {
            return Err(Error::InvalidArgument("need epsilon > epsilon_inner > 0".into()));
        }
        if !(self.u1 > 0.0 && self.u1 <= self.u2 && self.u2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scope widths must satisfy 0 < u1 <= u2 (got {}, {})",
                self.u1, self.u2
            )));
        }
        Ok(())
    }
}

/// Case-level tolerance `eps0 = sqrt(1 + eps) - 1`, so that `(1 + eps0)^2 = 1 + eps`.
pub fn epsilon_inner(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    // sqrt(1+e) - 1 == e / (sqrt(1+e) + 1), without cancellation for small e.
    Ok(epsilon / ((1.0 + epsilon).sqrt() + 1.0))
}

/// Largest loss a model may have while staying within `(1 + eps0)` of `reference`.
pub fn loss_bound(epsilon_inner: f64, reference: f64) -> f64 {
    (1.0 + epsilon_inner) * reference
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionCase {
    pub index: usize,
    pub removed: BTreeSet<String>,
    pub eligible: bool,
    /// Optimal training loss of this case (absent when the fit failed).
    pub loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimum: Option<FittedModel>,
}

impl ExclusionCase {
    /// Display label: "none" or the removed features joined with "+".
    pub fn label(&self) -> String {
        if self.removed.is_empty() {
            "none".to_string()
        } else {
            self.removed.iter().cloned().collect::<Vec<_>>().join("+")
        }
    }

    pub fn columns(&self) -> &[String] {
        self.optimum.as_ref().map_or(&[], |m| m.columns.as_slice())
    }
}

/// Fit the optimum of every subset of `sensitive` and flag eligibility
/// against the full-model optimum. Case 0 removes nothing.
pub fn enumerate_cases(
    sensitive: &[String],
    train: &TabularDataset,
    epsilon_inner: f64,
    fit: &FitConfig,
) -> Result<Vec<ExclusionCase>> {
    let names: Vec<String> = sensitive.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if names.len() > 16 {
        return Err(Error::InvalidArgument("too many sensitive features to enumerate".into()));
    }
    let full = fit_weighted_logistic(train, None, &BTreeSet::new(), fit)?;
    let bound = loss_bound(epsilon_inner, full.train_loss);
    let subsets: Vec<BTreeSet<String>> = (0..1usize << names.len())
        .map(|mask| {
            names
                .iter()
                .enumerate()
                .filter(|(b, _)| mask & (1 << b) != 0)
                .map(|(_, n)| n.clone())
                .collect()
        })
        .collect();
    let fits = par::map_slice(&subsets, |removed| {
        if removed.is_empty() {
            Ok(full.clone())
        } else {
            fit_weighted_logistic(train, None, removed, fit)
        }
    });
    Ok(subsets
        .into_iter()
        .zip(fits)
        .enumerate()
        .map(|(index, (removed, fit))| match fit {
            Ok(m) => ExclusionCase {
                index,
                eligible: m.train_loss <= bound,
                loss: Some(m.train_loss),
                reason: (m.train_loss > bound).then(|| {
                    format!("case loss {:.6} exceeds bound {:.6}", m.train_loss, bound)
                }),
                removed,
                optimum: Some(m),
            },
            Err(e) => ExclusionCase {
                index,
                removed,
                eligible: false,
                loss: None,
                reason: Some(format!("fit failed: {e}")),
                optimum: None,
            },
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub case: usize,
    pub draws: usize,
    pub accepted: usize,
    /// Draw budget ran out before the target was reached.
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledBeta {
    pub beta: Vec<f64>,
    pub loss: f64,
}

/// Rejection-sample around one case optimum.
///
/// Draw `d` of case `c` uses the stream keyed by `(seed, c, d)`; draws are
/// evaluated in parallel batches and scanned in draw order, so the output
/// does not depend on the thread count.
pub fn sample_case(
    case: &ExclusionCase,
    design: &Design,
    config: &SamplerConfig,
) -> Result<(Vec<SampledBeta>, AcceptanceStats)> {
    config.validate()?;
    let optimum = case
        .optimum
        .as_ref()
        .filter(|_| case.eligible)
        .ok_or_else(|| Error::InvalidArgument(format!("case {} is not eligible", case.index)))?;
    let chol = optimum.covariance.clone().cholesky().ok_or(Error::Cholesky)?;
    let lower = chol.l();
    let center = DVector::from_column_slice(&optimum.beta);
    let bound = loss_bound(config.epsilon_inner()?, optimum.train_loss);
    let dim = center.len();

    let mut accepted = Vec::with_capacity(config.n_target_per_case.min(config.max_draws_per_case));
    let mut draws = 0;
    while accepted.len() < config.n_target_per_case && draws < config.max_draws_per_case {
        let start = draws;
        let len = BATCH.min(config.max_draws_per_case - start);
        let batch = par::map_range(len, |k| -> Result<SampledBeta> {
            let mut rng = seed::rng(config.seed, &[seed::TAG_SAMPLER, case.index as u64, (start + k) as u64]);
            let scale = config.u1 + (config.u2 - config.u1) * rng.random::<f64>();
            let z = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let beta = &center + (&lower * z) * scale.sqrt();
            let beta: Vec<f64> = beta.iter().copied().collect();
            let loss = design.mean_loss(&beta, None)?;
            Ok(SampledBeta { beta, loss })
        });
        for draw in batch {
            draws += 1;
            let draw = draw?;
            if draw.loss <= bound {
                accepted.push(draw);
                if accepted.len() == config.n_target_per_case {
                    break;
                }
            }
        }
    }
    let stats = AcceptanceStats {
        case: case.index,
        draws,
        accepted: accepted.len(),
        exhausted: accepted.len() < config.n_target_per_case,
    };
    if stats.exhausted {
        tracing::warn!(case = case.index, draws, accepted = stats.accepted, "draw budget exhausted");
    }
    Ok((accepted, stats))
}

/// One member of the sampled cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateModel {
    pub id: usize,
    pub case: usize,
    pub beta: Vec<f64>,
    pub loss: f64,
    pub threshold: f64,
    pub fairness: BTreeMap<String, f64>,
    pub fri: Option<f64>,
    pub rank: Option<usize>,
    /// True for the injected case optimum.
    #[serde(default)]
    pub optimum: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCloud {
    pub config: SamplerConfig,
    pub epsilon_inner: f64,
    pub full_loss: f64,
    pub cases: Vec<ExclusionCase>,
    pub acceptance: Vec<AcceptanceStats>,
    pub candidates: Vec<CandidateModel>,
}

impl ModelCloud {
    pub fn candidate(&self, id: usize) -> Option<&CandidateModel> {
        // ids are dense from 1
        self.candidates.get(id.checked_sub(1)?).filter(|c| c.id == id)
    }

    pub fn case_of(&self, candidate: &CandidateModel) -> &ExclusionCase {
        &self.cases[candidate.case]
    }

    /// Candidate ranked first, if the cloud is ranked.
    pub fn top_ranked(&self) -> Option<&CandidateModel> {
        self.candidates.iter().find(|c| c.rank == Some(1))
    }

    /// The candidate's coefficients as a model with covariance from the
    /// observed Fisher information at those coefficients.
    pub fn fitted_model(&self, id: usize, train: &TabularDataset) -> Result<FittedModel> {
        let c = self
            .candidate(id)
            .ok_or_else(|| Error::InvalidArgument(format!("no candidate {id}")))?;
        let case = self.case_of(c);
        let design = Design::new(train, case.columns())?;
        Ok(FittedModel {
            columns: case.columns().to_vec(),
            beta: c.beta.clone(),
            covariance: design.covariance(&c.beta, None)?,
            exclusion_case: case.removed.clone(),
            train_loss: c.loss,
        })
    }
}

/// Enumerate cases, sample every eligible one, inject each case optimum,
/// and attach a validation-set Youden threshold to every candidate.
/// Fairness fields are left for ranking.
pub fn build_cloud(
    train: &TabularDataset,
    valid: &TabularDataset,
    sensitive: &[String],
    config: &SamplerConfig,
    fit: &FitConfig,
) -> Result<ModelCloud> {
    config.validate()?;
    let eps0 = config.epsilon_inner()?;
    let cases = enumerate_cases(sensitive, train, eps0, fit)?;
    let full_loss = cases[0]
        .loss
        .ok_or_else(|| Error::InvalidArgument("full model fit failed".into()))?;
    if !cases.iter().any(|c| c.eligible) {
        return Err(Error::NoEligibleCases);
    }

    let mut candidates = Vec::new();
    let mut acceptance = Vec::new();
    let valid_labels: Vec<bool> = valid.outcome().iter().map(|&y| y == 1).collect();
    for case in cases.iter().filter(|c| c.eligible) {
        let optimum = case.optimum.as_ref().expect("eligible cases have an optimum");
        let design = Design::new(train, &optimum.columns)?;
        let (draws, stats) = sample_case(case, &design, config)?;
        acceptance.push(stats);
        let members = std::iter::once((optimum.beta.clone(), optimum.train_loss, true))
            .chain(draws.into_iter().map(|d| (d.beta, d.loss, false)));
        let valid_design = Design::new(valid, &optimum.columns)?;
        let start = candidates.len();
        for (beta, loss, is_opt) in members {
            candidates.push(CandidateModel {
                id: 0,
                case: case.index,
                beta,
                loss,
                threshold: f64::NAN,
                fairness: BTreeMap::new(),
                fri: None,
                rank: None,
                optimum: is_opt,
                flag: None,
            });
        }
        par::map_slice_mut(&mut candidates[start..], |c| {
            match valid_design
                .probabilities(&c.beta)
                .and_then(|p| youden_threshold(&p, &valid_labels))
            {
                Ok(y) => c.threshold = y.threshold,
                Err(e) => {
                    c.threshold = 0.5;
                    c.flag = Some(format!("threshold: {e}"));
                }
            }
        });
    }
    for (i, c) in candidates.iter_mut().enumerate() {
        c.id = i + 1;
    }
    Ok(ModelCloud {
        config: config.clone(),
        epsilon_inner: eps0,
        full_loss,
        cases,
        acceptance,
        candidates,
    })
}
