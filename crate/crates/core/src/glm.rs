//! Weighted binomial/logit regression fitted by Newton-Raphson (IRLS).

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::TabularDataset;
use crate::error::{Error, Result};

pub const INTERCEPT: &str = "(intercept)";
const P_CLIP: f64 = 1e-12;
/// Bound on |beta_j| * sd(x_j) beyond which the fit is declared separated.
const SEPARATION_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-8 }
    }
}

/// Coefficients (intercept first), covariance and training loss of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub columns: Vec<String>,
    pub beta: Vec<f64>,
    #[serde(with = "matrix_rows")]
    pub covariance: DMatrix<f64>,
    pub exclusion_case: BTreeSet<String>,
    pub train_loss: f64,
}

/// Serialize a square matrix as an array of rows.
pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(serde::de::Error::custom("covariance must be square"));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

#[inline]
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Per-row logit loss with probabilities clipped to `[1e-12, 1 - 1e-12]`.
#[inline]
pub fn logit_loss(y: f64, p: f64) -> f64 {
    let p = p.clamp(P_CLIP, 1.0 - P_CLIP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Dense design matrix (leading column of ones) bound to a column list.
#[derive(Debug, Clone)]
pub struct Design {
    columns: Vec<String>,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Design {
    pub fn new(data: &TabularDataset, columns: &[String]) -> Result<Self> {
        let idx = data.column_indices(columns)?;
        let n = data.n_rows();
        let x = DMatrix::from_fn(n, idx.len() + 1, |i, j| if j == 0 { 1.0 } else { data.value(i, idx[j - 1]) });
        let y = DVector::from_iterator(n, data.outcome().iter().map(|&v| f64::from(v)));
        Ok(Self {
            columns: columns.to_vec(),
            x,
            y,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    /// Number of coefficients including the intercept.
    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn outcome(&self) -> &DVector<f64> {
        &self.y
    }

    fn check_beta(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.dim() {
            return Err(Error::ColumnMismatch(format!(
                "{} coefficients for {} design columns",
                beta.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn linear_predictor(&self, beta: &[f64]) -> Result<DVector<f64>> {
        self.check_beta(beta)?;
        Ok(&self.x * DVector::from_column_slice(beta))
    }

    pub fn probabilities(&self, beta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.linear_predictor(beta)?.iter().map(|&e| sigmoid(e)).collect())
    }

    /// Weighted mean logit loss.
    pub fn mean_loss(&self, beta: &[f64], weights: Option<&[f64]>) -> Result<f64> {
        let eta = self.linear_predictor(beta)?;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..self.n_rows() {
            let w = weights.map_or(1.0, |w| w[i]);
            num += w * logit_loss(self.y[i], sigmoid(eta[i]));
            den += w;
        }
        if den <= 0.0 {
            return Err(Error::EmptyData("no rows with positive weight".into()));
        }
        Ok(num / den)
    }

    /// Gradient of the weighted mean logit loss.
    pub fn mean_loss_gradient(&self, beta: &[f64], weights: Option<&[f64]>) -> Result<Vec<f64>> {
        let eta = self.linear_predictor(beta)?;
        let mut r = DVector::zeros(self.n_rows());
        let mut den = 0.0;
        for i in 0..self.n_rows() {
            let w = weights.map_or(1.0, |w| w[i]);
            r[i] = w * (sigmoid(eta[i]) - self.y[i]);
            den += w;
        }
        Ok((self.x.tr_mul(&r) / den).iter().copied().collect())
    }

    /// Observed Fisher information of the total weighted log-likelihood.
    pub fn fisher_information(&self, beta: &[f64], weights: Option<&[f64]>) -> Result<DMatrix<f64>> {
        let eta = self.linear_predictor(beta)?;
        let mut xw = self.x.clone();
        for i in 0..self.n_rows() {
            let p = sigmoid(eta[i]);
            let w = weights.map_or(1.0, |w| w[i]) * p * (1.0 - p);
            xw.row_mut(i).scale_mut(w);
        }
        let h = self.x.tr_mul(&xw);
        Ok((&h + h.transpose()) * 0.5)
    }

    /// Inverse observed Fisher information at `beta`.
    pub fn covariance(&self, beta: &[f64], weights: Option<&[f64]>) -> Result<DMatrix<f64>> {
        let info = self.fisher_information(beta, weights)?;
        let chol = info
            .cholesky()
            .ok_or_else(|| Error::Singular { columns: self.collinear_columns(weights) })?;
        let inv = chol.inverse();
        Ok((&inv + inv.transpose()) * 0.5)
    }

    /// Columns linearly dependent on earlier ones among rows with positive weight.
    pub fn collinear_columns(&self, weights: Option<&[f64]>) -> Vec<String> {
        let rows: Vec<usize> = (0..self.n_rows())
            .filter(|&i| weights.is_none_or(|w| w[i] > 0.0))
            .collect();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut out = Vec::new();
        for j in 0..self.dim() {
            let mut v = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.x[(i, j)]));
            let norm0 = v.norm();
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
            let norm = v.norm();
            if norm0 == 0.0 || norm <= 1e-9 * norm0 {
                out.push(if j == 0 {
                    INTERCEPT.to_string()
                } else {
                    self.columns[j - 1].clone()
                });
            } else {
                basis.push(v / norm);
            }
        }
        out
    }

    fn column_sd(&self, j: usize, weights: Option<&[f64]>) -> f64 {
        let (mut s, mut s2, mut sw) = (0.0, 0.0, 0.0);
        for i in 0..self.n_rows() {
            let w = weights.map_or(1.0, |w| w[i]);
            let v = self.x[(i, j)];
            s += w * v;
            s2 += w * v * v;
            sw += w;
        }
        let m = s / sw;
        (s2 / sw - m * m).max(0.0).sqrt()
    }
}

fn validate_weights(n: usize, weights: Option<&[f64]>) -> Result<()> {
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::InvalidArgument(format!("{} weights for {n} rows", w.len())));
        }
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
    }
    Ok(())
}

/// Weighted maximum-likelihood logistic fit with the features in
/// `exclusion_case` removed from the design.
pub fn fit_weighted_logistic(
    train: &TabularDataset,
    weights: Option<&[f64]>,
    exclusion_case: &BTreeSet<String>,
    config: &FitConfig,
) -> Result<FittedModel> {
    let columns = train.columns_excluding(exclusion_case);
    let design = Design::new(train, &columns)?;
    let mut model = fit_design(&design, weights, config)?;
    model.exclusion_case = exclusion_case.clone();
    Ok(model)
}

/// Fit on a prebuilt design.
pub fn fit_design(design: &Design, weights: Option<&[f64]>, config: &FitConfig) -> Result<FittedModel> {
    let n = design.n_rows();
    if n == 0 {
        return Err(Error::EmptyData("cannot fit on zero rows".into()));
    }
    validate_weights(n, weights)?;
    let (mut pos, mut neg) = (0.0, 0.0);
    for i in 0..n {
        let w = weights.map_or(1.0, |w| w[i]);
        if design.y[i] > 0.5 {
            pos += w;
        } else {
            neg += w;
        }
    }
    if pos <= 0.0 || neg <= 0.0 {
        return Err(Error::SingleClass);
    }

    let dim = design.dim();
    let sds: Vec<f64> = (0..dim).map(|j| design.column_sd(j, weights)).collect();
    let mut beta = DVector::zeros(dim);
    beta[0] = (pos / neg).ln();
    let mut loss = design.mean_loss(beta.as_slice(), weights)?;
    let mut trace = Vec::new();

    for iter in 0..config.max_iter {
        let eta = &design.x * &beta;
        let mut r = DVector::zeros(n);
        let mut xw = design.x.clone();
        for i in 0..n {
            let p = sigmoid(eta[i]);
            let w = weights.map_or(1.0, |w| w[i]);
            r[i] = w * (design.y[i] - p);
            xw.row_mut(i).scale_mut(w * p * (1.0 - p));
        }
        let score = design.x.tr_mul(&r);
        let info = design.x.tr_mul(&xw);
        let info = (&info + info.transpose()) * 0.5;
        let chol = info.cholesky().ok_or_else(|| Error::Singular {
            columns: design.collinear_columns(weights),
        })?;
        let full_step = chol.solve(&score);

        // Step halving guards against overshoot far from the optimum.
        let mut step = full_step.clone();
        let mut next = &beta + &step;
        let mut next_loss = design.mean_loss(next.as_slice(), weights)?;
        let mut halvings = 0;
        while next_loss > loss * (1.0 + 1e-12) && halvings < 40 {
            step *= 0.5;
            next = &beta + &step;
            next_loss = design.mean_loss(next.as_slice(), weights)?;
            halvings += 1;
        }
        let max_step = step.amax();
        trace.push(max_step);
        beta = next;
        loss = next_loss;

        for j in 1..dim {
            let z = beta[j].abs() * sds[j];
            if z > SEPARATION_LIMIT {
                return Err(Error::Separation {
                    column: design.columns[j - 1].clone(),
                    value: z,
                });
            }
        }
        if beta[0].abs() > SEPARATION_LIMIT + 30.0 * dim as f64 {
            return Err(Error::Separation {
                column: INTERCEPT.to_string(),
                value: beta[0].abs(),
            });
        }
        if max_step < config.tol {
            tracing::debug!(iterations = iter + 1, loss, "logistic fit converged");
            let covariance = design.covariance(beta.as_slice(), weights)?;
            return Ok(FittedModel {
                columns: design.columns.clone(),
                beta: beta.iter().copied().collect(),
                covariance,
                exclusion_case: BTreeSet::new(),
                train_loss: loss,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: config.max_iter,
        trace,
    })
}

impl FittedModel {
    pub fn intercept(&self) -> f64 {
        self.beta[0]
    }

    /// Coefficient names, intercept first.
    pub fn coefficient_names(&self) -> Vec<String> {
        std::iter::once(INTERCEPT.to_string())
            .chain(self.columns.iter().cloned())
            .collect()
    }

    pub fn design(&self, data: &TabularDataset) -> Result<Design> {
        Design::new(data, &self.columns)
    }

    pub fn predict_proba(&self, data: &TabularDataset) -> Result<Vec<f64>> {
        self.design(data)?.probabilities(&self.beta)
    }

    pub fn standard_errors(&self) -> Result<Vec<f64>> {
        standard_errors(&self.covariance, &self.coefficient_names())
    }

    pub fn odds_ratio_table(&self) -> Result<Vec<OddsRatioRow>> {
        odds_ratio_table(&self.beta, &self.covariance, &self.coefficient_names())
    }
}

/// Weighted mean logit loss of `model` on `data`.
pub fn mean_logit_loss(model: &FittedModel, data: &TabularDataset, weights: Option<&[f64]>) -> Result<f64> {
    validate_weights(data.n_rows(), weights)?;
    model.design(data)?.mean_loss(&model.beta, weights)
}

/// `sqrt` of the covariance diagonal.
pub fn standard_errors(covariance: &DMatrix<f64>, names: &[String]) -> Result<Vec<f64>> {
    (0..covariance.nrows())
        .map(|i| {
            let v = covariance[(i, i)];
            if v < 0.0 || !v.is_finite() {
                Err(Error::NegativeVariance {
                    column: names.get(i).cloned().unwrap_or_default(),
                    value: v,
                })
            } else {
                Ok(v.sqrt())
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsRatioRow {
    pub column: String,
    pub beta: f64,
    pub se: f64,
    pub odds_ratio: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn odds_ratio_table(beta: &[f64], covariance: &DMatrix<f64>, names: &[String]) -> Result<Vec<OddsRatioRow>> {
    let se = standard_errors(covariance, names)?;
    Ok(beta
        .iter()
        .zip(&se)
        .zip(names)
        .map(|((&b, &s), n)| OddsRatioRow {
            column: n.clone(),
            beta: b,
            se: s,
            odds_ratio: b.exp(),
            lo: (b - 1.96 * s).exp(),
            hi: (b + 1.96 * s).exp(),
        })
        .collect())
}

/// Probabilities, the threshold applied to them and the resulting labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub probabilities: Vec<f64>,
    pub threshold: f64,
    pub labels: Vec<bool>,
}

impl PredictionSet {
    pub fn new(probabilities: Vec<f64>, threshold: f64) -> Self {
        let labels = probabilities.iter().map(|&p| p >= threshold).collect();
        Self {
            probabilities,
            threshold,
            labels,
        }
    }
}
