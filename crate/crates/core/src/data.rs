//! Tabular ingestion, recategorization, encoding, splitting and synthetic data.
//!
//! Categorical features are one-hot encoded against a reference level (the
//! first declared level unless overridden). Sensitive attribute labels are kept
//! per row as evaluation metadata regardless of which columns a model uses.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical {
        levels: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
    #[serde(default)]
    pub sensitive: bool,
}

impl FeatureSpec {
    pub fn numeric(name: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Numeric,
            sensitive: false,
        }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Categorical {
                levels: levels.iter().map(|s| s.to_string()).collect(),
                reference: None,
            },
            sensitive: false,
        }
    }

    pub fn with_reference(mut self, reference: &str) -> Self {
        if let FeatureKind::Categorical { reference: r, .. } = &mut self.kind {
            *r = Some(reference.to_string());
        }
        self
    }

    pub fn sensitive(mut self) -> Self {
        self.sensitive = true;
        self
    }

    /// Reference level of a categorical feature.
    pub fn reference_level(&self) -> Option<&str> {
        match &self.kind {
            FeatureKind::Numeric => None,
            FeatureKind::Categorical { levels, reference } => reference
                .as_deref()
                .or_else(|| levels.first().map(String::as_str)),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnknownLevelPolicy {
    #[default]
    Error,
    /// Map to the declared level named "others" (case-insensitive).
    MapToOthers,
}

/// Many-to-one relabeling of one categorical column: target level -> source levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecodeRule {
    pub feature: String,
    pub mapping: BTreeMap<String, Vec<String>>,
}

impl RecodeRule {
    pub fn new(feature: &str, mapping: &[(&str, &[&str])]) -> Self {
        Self {
            feature: feature.to_string(),
            mapping: mapping
                .iter()
                .map(|(t, s)| (t.to_string(), s.iter().map(|x| x.to_string()).collect()))
                .collect(),
        }
    }

    fn lookup(&self) -> BTreeMap<&str, &str> {
        self.mapping
            .iter()
            .flat_map(|(target, sources)| sources.iter().map(move |s| (s.as_str(), target.as_str())))
            .collect()
    }
}

/// Schema document: features, outcome column and preprocessing rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub features: Vec<FeatureSpec>,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub recode: Vec<RecodeRule>,
    #[serde(default)]
    pub unknown_level: UnknownLevelPolicy,
}

impl Schema {
    pub fn new(features: Vec<FeatureSpec>, outcome: &str) -> Self {
        Self {
            features,
            outcome: outcome.to_string(),
            recode: Vec::new(),
            unknown_level: UnknownLevelPolicy::Error,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature `{}`", f.name)));
            }
            if f.name == self.outcome {
                return Err(Error::Schema(format!("`{}` is both feature and outcome", f.name)));
            }
            if let FeatureKind::Categorical { levels, reference } = &f.kind {
                if levels.is_empty() {
                    return Err(Error::Schema(format!("`{}` has no levels", f.name)));
                }
                let unique: BTreeSet<_> = levels.iter().collect();
                if unique.len() != levels.len() {
                    return Err(Error::Schema(format!("`{}` has duplicate levels", f.name)));
                }
                if let Some(r) = reference {
                    if !levels.contains(r) {
                        return Err(Error::Schema(format!(
                            "reference `{r}` is not a level of `{}`",
                            f.name
                        )));
                    }
                }
            }
        }
        if self.features.iter().all(|f| f.sensitive) {
            return Err(Error::Schema("at least one non-sensitive feature is required".into()));
        }
        for rule in &self.recode {
            if !names.contains(rule.feature.as_str()) {
                return Err(Error::Schema(format!("recode rule for unknown feature `{}`", rule.feature)));
            }
        }
        Ok(())
    }

    pub fn sensitive_names(&self) -> Vec<String> {
        self.features
            .iter()
            .filter(|f| f.sensitive)
            .map(|f| f.name.clone())
            .collect()
    }
}

/// One encoded model column and the feature (and level) it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub feature: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<String>,
}

/// Raw cell value of one feature.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Numeric(f64),
    Level(String),
}

/// Unparsed string table as read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader(reader: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(reader);
        let header = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(|c| c.trim().to_string()).collect());
        }
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan")
}

/// Apply recode rules to raw string cells.
///
/// Every non-missing level present in a recoded column must be listed as a
/// source level of its rule.
pub fn recode(raw: &RawTable, rules: &[RecodeRule]) -> Result<RawTable> {
    let mut out = raw.clone();
    for rule in rules {
        let col = raw.column(&rule.feature)?;
        let lookup = rule.lookup();
        let uncovered: BTreeSet<String> = raw
            .rows
            .iter()
            .map(|r| r[col].as_str())
            .filter(|c| !is_missing(c) && !lookup.contains_key(c))
            .map(str::to_string)
            .collect();
        if !uncovered.is_empty() {
            return Err(Error::NonExhaustiveRecode {
                feature: rule.feature.clone(),
                uncovered: uncovered.into_iter().collect(),
            });
        }
        for row in &mut out.rows {
            if let Some(t) = lookup.get(row[col].as_str()) {
                row[col] = t.to_string();
            }
        }
    }
    Ok(out)
}

/// Recode then encode.
pub fn apply_recategorization(raw: &RawTable, rules: &[RecodeRule], schema: &Schema) -> Result<TabularDataset> {
    let recoded = recode(raw, rules)?;
    TabularDataset::encode(&recoded, schema)
}

/// Read, recode (using the schema's rules) and encode a CSV file.
pub fn ingest_csv(path: &Path, schema: &Schema) -> Result<TabularDataset> {
    schema.validate()?;
    let raw = RawTable::read_csv(path)?;
    apply_recategorization(&raw, &schema.recode, schema)
}

/// Encoded numeric design data plus outcome and sensitive metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    specs: Vec<FeatureSpec>,
    columns: Vec<ColumnInfo>,
    /// Row-major, `n_rows * columns.len()`.
    x: Vec<f64>,
    outcome: Vec<u8>,
    sensitive: BTreeMap<String, Vec<String>>,
    dropped_rows: usize,
}

impl TabularDataset {
    fn columns_for(specs: &[FeatureSpec]) -> Vec<ColumnInfo> {
        let mut columns = Vec::new();
        for f in specs {
            match &f.kind {
                FeatureKind::Numeric => columns.push(ColumnInfo {
                    name: f.name.clone(),
                    feature: f.name.clone(),
                    level: None,
                }),
                FeatureKind::Categorical { levels, .. } => {
                    let reference = f.reference_level();
                    for l in levels.iter().filter(|l| Some(l.as_str()) != reference) {
                        columns.push(ColumnInfo {
                            name: format!("{}_{}", f.name, l),
                            feature: f.name.clone(),
                            level: Some(l.clone()),
                        });
                    }
                }
            }
        }
        columns
    }

    /// Build a dataset from already-typed rows.
    pub fn from_values(specs: Vec<FeatureSpec>, rows: &[Vec<Value>], outcome: Vec<u8>) -> Result<Self> {
        if rows.len() != outcome.len() {
            return Err(Error::InvalidArgument("row count != outcome length".into()));
        }
        if outcome.iter().any(|&y| y > 1) {
            return Err(Error::InvalidArgument("outcome must be 0/1".into()));
        }
        let columns = Self::columns_for(&specs);
        let mut x = Vec::with_capacity(rows.len() * columns.len());
        let mut sensitive: BTreeMap<String, Vec<String>> = specs
            .iter()
            .filter(|f| f.sensitive)
            .map(|f| (f.name.clone(), Vec::with_capacity(rows.len())))
            .collect();
        for row in rows {
            x.extend(encode_row(&specs, row)?);
            for (f, v) in specs.iter().zip(row) {
                if let (true, Value::Level(l)) = (f.sensitive, v) {
                    sensitive.get_mut(&f.name).unwrap().push(l.clone());
                }
            }
        }
        if sensitive.values().any(|v| v.len() != rows.len()) {
            return Err(Error::Schema("sensitive features must be categorical".into()));
        }
        Ok(Self {
            specs,
            columns,
            x,
            outcome,
            sensitive,
            dropped_rows: 0,
        })
    }

    /// Encode a raw table under `schema`. Rows with a missing or unparseable
    /// modeled field are dropped and counted.
    pub fn encode(raw: &RawTable, schema: &Schema) -> Result<Self> {
        schema.validate()?;
        let y_col = raw.column(&schema.outcome)?;
        let cols: Vec<usize> = schema
            .features
            .iter()
            .map(|f| raw.column(&f.name))
            .collect::<Result<_>>()?;

        let mut rows = Vec::with_capacity(raw.rows.len());
        let mut outcome = Vec::with_capacity(raw.rows.len());
        let mut dropped = 0;
        'rows: for r in &raw.rows {
            let y = match r[y_col].as_str() {
                "0" | "0.0" | "false" | "FALSE" => 0,
                "1" | "1.0" | "true" | "TRUE" => 1,
                _ => {
                    dropped += 1;
                    continue;
                }
            };
            let mut values = Vec::with_capacity(cols.len());
            for (f, &c) in schema.features.iter().zip(&cols) {
                let cell = r[c].as_str();
                if is_missing(cell) {
                    dropped += 1;
                    continue 'rows;
                }
                match &f.kind {
                    FeatureKind::Numeric => match cell.parse::<f64>() {
                        Ok(v) if v.is_finite() => values.push(Value::Numeric(v)),
                        _ => {
                            dropped += 1;
                            continue 'rows;
                        }
                    },
                    FeatureKind::Categorical { levels, .. } => {
                        if levels.iter().any(|l| l == cell) {
                            values.push(Value::Level(cell.to_string()));
                        } else {
                            match schema.unknown_level {
                                UnknownLevelPolicy::Error => {
                                    return Err(Error::UnknownLevel {
                                        feature: f.name.clone(),
                                        level: cell.to_string(),
                                    })
                                }
                                UnknownLevelPolicy::MapToOthers => {
                                    let others = levels
                                        .iter()
                                        .find(|l| l.eq_ignore_ascii_case("others"))
                                        .ok_or_else(|| Error::UnknownLevel {
                                            feature: f.name.clone(),
                                            level: cell.to_string(),
                                        })?;
                                    values.push(Value::Level(others.clone()));
                                }
                            }
                        }
                    }
                }
            }
            rows.push(values);
            outcome.push(y);
        }
        if dropped > 0 {
            tracing::info!(dropped, kept = rows.len(), "dropped rows with missing or unparseable fields");
        }
        let mut ds = Self::from_values(schema.features.clone(), &rows, outcome)?;
        ds.dropped_rows = dropped;
        Ok(ds)
    }

    pub fn n_rows(&self) -> usize {
        self.outcome.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn columns(&self) -> &[ColumnInfo] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn outcome(&self) -> &[u8] {
        &self.outcome
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_cols();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.x[i * self.n_cols() + j]
    }

    pub fn sensitive_names(&self) -> Vec<String> {
        self.sensitive.keys().cloned().collect()
    }

    /// Per-row labels of one sensitive feature.
    pub fn sensitive_labels(&self, name: &str) -> Option<&[String]> {
        self.sensitive.get(name).map(Vec::as_slice)
    }

    /// Sensitive labels of one row, keyed by feature name.
    pub fn sensitive_row(&self, i: usize) -> BTreeMap<String, String> {
        self.sensitive
            .iter()
            .map(|(k, v)| (k.clone(), v[i].clone()))
            .collect()
    }

    /// Indices of `names` among this dataset's columns.
    pub fn column_indices(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.columns
                    .iter()
                    .position(|c| &c.name == n)
                    .ok_or_else(|| Error::ColumnMismatch(format!("column `{n}` not in dataset")))
            })
            .collect()
    }

    /// Model columns remaining after removing the given features.
    pub fn columns_excluding(&self, excluded: &BTreeSet<String>) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| !excluded.contains(&c.feature))
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn decode_row(&self, i: usize) -> Vec<Value> {
        decode_row(&self.specs, &self.columns, self.row(i))
    }

    /// New dataset holding the given rows, in the given order (repeats allowed).
    pub fn subset(&self, rows: &[usize]) -> Self {
        let p = self.n_cols();
        let mut x = Vec::with_capacity(rows.len() * p);
        for &r in rows {
            x.extend_from_slice(self.row(r));
        }
        Self {
            specs: self.specs.clone(),
            columns: self.columns.clone(),
            x,
            outcome: rows.iter().map(|&r| self.outcome[r]).collect(),
            sensitive: self
                .sensitive
                .iter()
                .map(|(k, v)| (k.clone(), rows.iter().map(|&r| v[r].clone()).collect()))
                .collect(),
            dropped_rows: 0,
        }
    }

    /// Write the decoded (pre-encoding) values back out as CSV.
    pub fn write_csv(&self, path: &Path, outcome_name: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<&str> = self.specs.iter().map(|f| f.name.as_str()).collect();
        header.push(outcome_name);
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec: Vec<String> = self
                .decode_row(i)
                .into_iter()
                .map(|v| match v {
                    Value::Numeric(x) => x.to_string(),
                    Value::Level(l) => l,
                })
                .collect();
            rec.push(self.outcome[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Encode one typed row to model columns.
pub fn encode_row(specs: &[FeatureSpec], row: &[Value]) -> Result<Vec<f64>> {
    if row.len() != specs.len() {
        return Err(Error::InvalidArgument(format!(
            "row has {} values, schema has {} features",
            row.len(),
            specs.len()
        )));
    }
    let mut out = Vec::new();
    for (f, v) in specs.iter().zip(row) {
        match (&f.kind, v) {
            (FeatureKind::Numeric, Value::Numeric(x)) => out.push(*x),
            (FeatureKind::Categorical { levels, .. }, Value::Level(l)) => {
                if !levels.contains(l) {
                    return Err(Error::UnknownLevel {
                        feature: f.name.clone(),
                        level: l.clone(),
                    });
                }
                let reference = f.reference_level();
                for lv in levels.iter().filter(|lv| Some(lv.as_str()) != reference) {
                    out.push(if lv == l { 1.0 } else { 0.0 });
                }
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "value kind does not match feature `{}`",
                    f.name
                )))
            }
        }
    }
    Ok(out)
}

fn decode_row(specs: &[FeatureSpec], columns: &[ColumnInfo], encoded: &[f64]) -> Vec<Value> {
    specs
        .iter()
        .map(|f| match &f.kind {
            FeatureKind::Numeric => {
                let j = columns.iter().position(|c| c.feature == f.name).unwrap();
                Value::Numeric(encoded[j])
            }
            FeatureKind::Categorical { .. } => {
                let hot = columns
                    .iter()
                    .zip(encoded)
                    .find(|(c, &v)| c.feature == f.name && v == 1.0)
                    .and_then(|(c, _)| c.level.clone());
                Value::Level(hot.unwrap_or_else(|| f.reference_level().unwrap_or_default().to_string()))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.70,
            valid_frac: 0.10,
            test_frac: 0.20,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Row indices of (train, valid, test).
    pub fn assign(&self, n_rows: usize) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
        let fracs = [self.train_frac, self.valid_frac, self.test_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("split fractions {fracs:?} must sum to 1")));
        }
        if n_rows < 3 {
            return Err(Error::EmptyData(format!("cannot split {n_rows} rows")));
        }
        let mut idx: Vec<usize> = (0..n_rows).collect();
        idx.shuffle(&mut seed::rng(self.seed, &[seed::TAG_SPLIT]));
        let n_train = (n_rows as f64 * self.train_frac).round() as usize;
        let n_valid = ((n_rows as f64 * self.valid_frac).round() as usize).min(n_rows - n_train);
        let test = idx.split_off(n_train + n_valid);
        let valid = idx.split_off(n_train);
        Ok((idx, valid, test))
    }
}

pub struct Splits {
    pub train: TabularDataset,
    pub valid: TabularDataset,
    pub test: TabularDataset,
}

/// Seeded shuffle then contiguous slicing.
pub fn split(dataset: &TabularDataset, spec: &SplitSpec) -> Result<Splits> {
    let (train, valid, test) = spec.assign(dataset.n_rows())?;
    Ok(Splits {
        train: dataset.subset(&train),
        valid: dataset.subset(&valid),
        test: dataset.subset(&test),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_rows: usize,
    pub seed: u64,
    pub bias_strength: f64,
}

/// Coefficients of the logistic model the synthetic outcome is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
}

impl GroundTruth {
    pub fn logit(&self, ds: &TabularDataset, i: usize) -> f64 {
        self.intercept
            + ds.columns()
                .iter()
                .zip(ds.row(i))
                .map(|(c, x)| self.coefficients.get(&c.name).copied().unwrap_or(0.0) * x)
                .sum::<f64>()
    }
}

pub const SYNTH_RACE_LEVELS: [&str; 4] = ["R1", "R2", "R3", "R4"];
const SYNTH_RACE_PROBS: [f64; 4] = [0.45, 0.25, 0.18, 0.12];
const SYNTH_RACE_EFFECT: [f64; 4] = [0.0, 0.13, -0.10, 0.14];
const SYNTH_SEX_EFFECT: f64 = 0.05;
const SYNTH_NUMERIC_EFFECT: [f64; 6] = [0.9, -0.6, 0.45, 0.3, -0.2, 0.0];
const SYNTH_INTERCEPT: f64 = -0.8;

pub fn synthetic_schema() -> Schema {
    let mut features = vec![
        FeatureSpec::categorical("race", &SYNTH_RACE_LEVELS).sensitive(),
        FeatureSpec::categorical("sex", &["F", "M"]).sensitive(),
    ];
    features.extend((1..=6).map(|j| FeatureSpec::numeric(&format!("x{j}"))));
    Schema::new(features, "y")
}

/// Draw a dataset from a known logistic model whose sensitive-feature
/// coefficients scale linearly with `bias_strength`.
///
/// Sensitive attributes are independent of the numeric features, so with zero
/// bias the group outcome rates agree up to sampling noise.
pub fn generate_synthetic(config: &SynthConfig) -> Result<(TabularDataset, GroundTruth)> {
    if config.n_rows < 100 {
        return Err(Error::InvalidArgument(format!("n_rows = {} < 100", config.n_rows)));
    }
    if !(config.bias_strength >= 0.0) {
        return Err(Error::InvalidArgument("bias_strength must be >= 0".into()));
    }
    let schema = synthetic_schema();
    let b = config.bias_strength;
    let mut coefficients = BTreeMap::new();
    for (l, e) in SYNTH_RACE_LEVELS.iter().zip(SYNTH_RACE_EFFECT).skip(1) {
        coefficients.insert(format!("race_{l}"), b * e);
    }
    coefficients.insert("sex_M".to_string(), b * SYNTH_SEX_EFFECT);
    for (j, e) in SYNTH_NUMERIC_EFFECT.iter().enumerate() {
        coefficients.insert(format!("x{}", j + 1), *e);
    }
    let truth = GroundTruth {
        intercept: SYNTH_INTERCEPT,
        coefficients,
    };

    let mut rng = seed::rng(config.seed, &[seed::TAG_SYNTH]);
    let mut rows = Vec::with_capacity(config.n_rows);
    let mut logits = Vec::with_capacity(config.n_rows);
    for _ in 0..config.n_rows {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut race = SYNTH_RACE_LEVELS.len() - 1;
        for (k, p) in SYNTH_RACE_PROBS.iter().enumerate() {
            acc += p;
            if u < acc {
                race = k;
                break;
            }
        }
        let male = rng.random_bool(0.5);
        let xs: [f64; 6] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let mut eta = SYNTH_INTERCEPT + b * SYNTH_RACE_EFFECT[race] + if male { b * SYNTH_SEX_EFFECT } else { 0.0 };
        eta += xs.iter().zip(SYNTH_NUMERIC_EFFECT).map(|(x, e)| x * e).sum::<f64>();
        let mut row = vec![
            Value::Level(SYNTH_RACE_LEVELS[race].to_string()),
            Value::Level(if male { "M" } else { "F" }.to_string()),
        ];
        row.extend(xs.iter().map(|&x| Value::Numeric(x)));
        rows.push(row);
        logits.push(eta);
    }
    let outcome = logits
        .iter()
        .map(|&eta| u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp())))
        .collect();
    let ds = TabularDataset::from_values(schema.features, &rows, outcome)?;
    Ok((ds, truth))
}
