use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("recode rule for `{feature}` does not cover levels: {uncovered:?}")]
    NonExhaustiveRecode {
        feature: String,
        uncovered: Vec<String>,
    },

    #[error("unknown level `{level}` for categorical feature `{feature}`")]
    UnknownLevel { feature: String, level: String },

    #[error("empty dataset: {0}")]
    EmptyData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("outcome has a single class among rows with positive weight")]
    SingleClass,

    #[error("logistic fit did not converge within {iterations} iterations (max |step| trace: {trace:?})")]
    NonConvergence { iterations: usize, trace: Vec<f64> },

    #[error("quasi-complete separation: standardized coefficient for `{column}` reached {value:.1}")]
    Separation { column: String, value: f64 },

    #[error("singular Fisher information; collinear columns: {columns:?}")]
    Singular { columns: Vec<String> },

    #[error("column mismatch: {0}")]
    ColumnMismatch(String),

    #[error("covariance has negative diagonal at `{column}` ({value:e})")]
    NegativeVariance { column: String, value: f64 },

    #[error("covariance is not positive definite (Cholesky failed)")]
    Cholesky,

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("negative metric value {0}")]
    NegativeMetric(f64),

    #[error("empty (group, outcome) cell {group}/{outcome}; try per-attribute groups instead of intersectional")]
    EmptyCell { group: String, outcome: u8 },

    #[error("infeasible post-processing target: {0}")]
    Infeasible(String),

    #[error("unknown group `{0}`")]
    UnknownGroup(String),

    #[error("bootstrap redraw budget exhausted after {0} single-class resamples")]
    RedrawBudget(usize),

    #[error("no eligible exclusion cases")]
    NoEligibleCases,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
