//! Exact SHAP values for logistic models on the log-odds scale.
//!
//! For a linear predictor under the marginal value function the Shapley value
//! of column `j` is `beta_j * (x_j - mean_background(x_j))`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::glm::FittedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapMatrix {
    pub columns: Vec<String>,
    /// Originating feature of each column.
    pub features: Vec<String>,
    /// Row-major `n_rows x columns.len()`.
    pub values: Vec<Vec<f64>>,
    pub base_value: f64,
    pub background_means: Vec<f64>,
}

impl ShapMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    /// Attributions laid out over `all_columns`; columns the model lacks are 0.
    pub fn dense_over(&self, all_columns: &[String]) -> Vec<Vec<f64>> {
        let pos: Vec<Option<usize>> = all_columns
            .iter()
            .map(|c| self.columns.iter().position(|m| m == c))
            .collect();
        self.values
            .iter()
            .map(|row| pos.iter().map(|p| p.map_or(0.0, |j| row[j])).collect())
            .collect()
    }

    /// CSV with one row per explained row and one column per model column.
    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.values {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

pub fn linear_shap(model: &FittedModel, background: &TabularDataset, explain: &TabularDataset) -> Result<ShapMatrix> {
    if background.is_empty() {
        return Err(Error::EmptyData("empty SHAP background".into()));
    }
    let bg_idx = background.column_indices(&model.columns)?;
    let ex_idx = explain.column_indices(&model.columns)?;
    let n_bg = background.n_rows() as f64;
    let means: Vec<f64> = bg_idx
        .iter()
        .map(|&j| (0..background.n_rows()).map(|i| background.value(i, j)).sum::<f64>() / n_bg)
        .collect();
    let coefs = &model.beta[1..];
    let base_value = model.beta[0] + coefs.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    let values = (0..explain.n_rows())
        .map(|i| {
            ex_idx
                .iter()
                .zip(coefs)
                .zip(&means)
                .map(|((&j, b), m)| b * (explain.value(i, j) - m))
                .collect()
        })
        .collect();
    let features = ex_idx.iter().map(|&j| explain.columns()[j].feature.clone()).collect();
    Ok(ShapMatrix {
        columns: model.columns.clone(),
        features,
        values,
        base_value,
        background_means: means,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub feature: String,
    pub baseline: f64,
    pub selected: f64,
    pub delta: f64,
    pub in_baseline: bool,
    pub in_selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceComparison {
    pub rows: Vec<ImportanceRow>,
}

/// Mean |phi| per original feature; one-hot columns of a feature are summed
/// in absolute value per row before averaging.
fn feature_importance(shap: &ShapMatrix) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for f in &shap.features {
        out.entry(f.clone()).or_default();
    }
    let n = shap.n_rows().max(1) as f64;
    for row in &shap.values {
        for (v, f) in row.iter().zip(&shap.features) {
            *out.get_mut(f).unwrap() += v.abs() / n;
        }
    }
    out
}

/// Align two attribution matrices over the same explained rows by feature,
/// sorted by baseline importance (descending).
pub fn compare_importance(base: &ShapMatrix, selected: &ShapMatrix) -> Result<ImportanceComparison> {
    if base.n_rows() != selected.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "explained rows differ: {} vs {}",
            base.n_rows(),
            selected.n_rows()
        )));
    }
    let bi = feature_importance(base);
    let fi = feature_importance(selected);
    let mut features: Vec<&String> = bi.keys().chain(fi.keys()).collect();
    features.sort();
    features.dedup();
    let mut rows: Vec<ImportanceRow> = features
        .into_iter()
        .map(|f| {
            let b = bi.get(f).copied().unwrap_or(0.0);
            let a = fi.get(f).copied().unwrap_or(0.0);
            ImportanceRow {
                feature: f.clone(),
                baseline: b,
                selected: a,
                delta: a - b,
                in_baseline: bi.contains_key(f),
                in_selected: fi.contains_key(f),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.baseline.total_cmp(&a.baseline).then(a.feature.cmp(&b.feature)));
    Ok(ImportanceComparison { rows })
}
