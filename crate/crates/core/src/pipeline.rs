//! End-to-end run: data, cloud, ranking, default selection, evaluation
//! against comparator methods, and explanation artifacts.
//!
//! Every JSON artifact carries `schema_version` and the hash of the run
//! configuration. Given the same configuration the artifact bytes are
//! identical regardless of thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, GroundTruth, Schema, SplitSpec, Splits, SynthConfig, TabularDataset};
use crate::error::{Error, Result};
use crate::evaluation::{bootstrap_diff_test, bootstrap_eval, EvalInput, EvalReport, MetricRow};
use crate::fairness::{
    exclusion_tabulation, fairness_metrics, rank_cloud, subgroup_gaps, Bands, ExclusionTabulation, GroupDefinition,
    GroupMode, Grouping, RankConfig, SubgroupGapReport,
};
use crate::glm::{fit_weighted_logistic, FitConfig, FittedModel, OddsRatioRow};
use crate::metrics::youden_threshold;
use crate::mitigation::{eo_postprocess_apply, eo_postprocess_fit, reweigh_weights, under_blindness};
use crate::sampler::{build_cloud, ModelCloud, SamplerConfig};
use crate::shap::{compare_importance, linear_shap, ImportanceComparison, ShapMatrix};
use crate::{par, seed};

pub const SCHEMA_VERSION: u32 = 1;

pub const CLOUD_FILE: &str = "ranked_cloud.json";
pub const TABULATION_FILE: &str = "tabulation.json";
pub const DEFAULT_SELECTION_FILE: &str = "selection_default.json";
pub const SELECTION_FILE: &str = "selection.json";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const EVALUATION_TABLE_FILE: &str = "evaluation.txt";
pub const SUBGROUP_FILE: &str = "subgroup_gaps.json";
pub const EXPLANATION_FILE: &str = "explanation.json";
pub const SHAP_BASELINE_CSV: &str = "shap_baseline.csv";
pub const SHAP_SELECTED_CSV: &str = "shap_selected.csv";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv { path: PathBuf, schema: PathBuf },
    Synthetic(SynthConfig),
}

/// Settings that affect how a run executes but not what it computes.
/// They are excluded from the configuration hash.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    /// Worker threads for data-parallel stages; 0 uses the ambient pool.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub data: DataSource,
    /// Defaults to the features flagged sensitive in the schema.
    #[serde(default)]
    pub sensitive: Option<Vec<String>>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub rank: RankConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub bands: Bands,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default)]
    pub eval_seed: u64,
    #[serde(default = "default_shap_rows")]
    pub shap_background: usize,
    #[serde(default = "default_shap_rows")]
    pub shap_explain: usize,
    #[serde(default)]
    pub execution: Execution,
}

fn default_n_boot() -> usize {
    1000
}

fn default_shap_rows() -> usize {
    512
}

impl RunConfig {
    pub fn synthetic(synth: SynthConfig) -> Self {
        Self {
            data: DataSource::Synthetic(synth),
            sensitive: None,
            split_seed: synth.seed,
            sampler: SamplerConfig {
                seed: synth.seed,
                ..SamplerConfig::default()
            },
            rank: RankConfig::default(),
            fit: FitConfig::default(),
            bands: Bands::default(),
            n_boot: default_n_boot(),
            eval_seed: synth.seed,
            shap_background: default_shap_rows(),
            shap_explain: default_shap_rows(),
            execution: Execution::default(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The configuration with execution settings reset; this is what the
    /// hash covers and what `config.json` records.
    pub fn without_execution(&self) -> Self {
        Self {
            execution: Execution::default(),
            ..self.clone()
        }
    }

    /// Hex SHA-256 prefix over the JSON of everything except `execution`.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.without_execution()).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))[..16].to_string()
    }
}

/// JSON envelope shared by all artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub schema_version: u32,
    pub config_hash: String,
    #[serde(flatten)]
    pub body: T,
}

impl<T: Serialize> Artifact<T> {
    pub fn new(config_hash: &str, body: T) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.to_string(),
            body,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }
}

pub fn read_artifact<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Artifact<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let a: Artifact<T> = serde_json::from_slice(&bytes)?;
    if a.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema(format!("unsupported schema_version {}", a.schema_version)));
    }
    Ok(a)
}

/// Ranked cloud as written to disk and served to the selection UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCloud {
    pub rank: RankConfig,
    #[serde(flatten)]
    pub cloud: ModelCloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSource {
    Default,
    Committed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub source: SelectionSource,
    pub cloud_fingerprint: String,
    pub selected_id: usize,
    pub rank: Option<usize>,
    pub case: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub justification: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub committed_at: Option<String>,
}

pub fn fingerprint(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Loaded and split data for one configuration.
pub struct Prepared {
    pub dataset: TabularDataset,
    pub truth: Option<GroundTruth>,
    pub splits: Splits,
    pub sensitive: Vec<String>,
    pub outcome_name: String,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    let (dataset, truth, schema_sensitive, outcome_name) = match &config.data {
        DataSource::Csv { path, schema } => {
            let schema = Schema::from_json_file(schema)?;
            let ds = data::ingest_csv(path, &schema)?;
            (ds, None, schema.sensitive_names(), schema.outcome.clone())
        }
        DataSource::Synthetic(s) => {
            let (ds, truth) = data::generate_synthetic(s)?;
            let schema = data::synthetic_schema();
            (ds, Some(truth), schema.sensitive_names(), schema.outcome)
        }
    };
    if dataset.is_empty() {
        return Err(Error::EmptyData("dataset has zero rows after ingestion".into()));
    }
    let sensitive = config.sensitive.clone().unwrap_or(schema_sensitive);
    for s in &sensitive {
        if dataset.sensitive_labels(s).is_none() {
            return Err(Error::Schema(format!("`{s}` is not a sensitive categorical feature")));
        }
    }
    let splits = data::split(&dataset, &SplitSpec::with_seed(config.split_seed))?;
    Ok(Prepared {
        dataset,
        truth,
        splits,
        sensitive,
        outcome_name,
    })
}

fn labels_of(ds: &TabularDataset) -> Vec<bool> {
    ds.outcome().iter().map(|&y| y == 1).collect()
}

/// Intersectional grouping over the sensitive features, used where a single
/// partition is required (post-processing).
fn joint_grouping(ds: &TabularDataset, sensitive: &[String], min_size: usize) -> Result<(Grouping, Vec<String>)> {
    let def = GroupDefinition::build(ds, sensitive, GroupMode::Intersectional, min_size)?;
    let g = def.groupings.into_iter().next().expect("one grouping");
    let labels = g.membership.iter().map(|&k| g.groups[k].clone()).collect();
    Ok((g, labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub available: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub threshold: Option<f64>,
    pub metrics: Vec<MetricRow>,
    /// Two-sided bootstrap t-test p-values against the baseline, per metric.
    pub p_values: BTreeMap<String, f64>,
}

impl ComparisonRow {
    pub fn metric(&self, name: &str) -> Option<&MetricRow> {
        self.metrics.iter().find(|m| m.metric == name)
    }

    /// `eop, eod, ber, auc [lo, hi], sens [lo, hi], spec [lo, hi]` at three decimals.
    pub fn format_row(&self) -> String {
        if !self.available {
            return format!("{}: unavailable", self.method);
        }
        let f = |k: &str| self.metric(k).map_or("NA".to_string(), |m| format!("{:.3}", m.point));
        let ci = |k: &str| {
            self.metric(k)
                .map_or("NA".to_string(), |m| format!("{:.3} [{:.3}, {:.3}]", m.point, m.lo, m.hi))
        };
        format!(
            "{}, {}, {}, {}, {}, {}",
            f("eop"),
            f("eod"),
            f("ber"),
            ci("auc"),
            ci("sensitivity"),
            ci("specificity")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub n_boot: usize,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, method: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
        let mut s = format!(
            "{:width$}  Equal Opportunity, Equalized Odds, BER equality, AUC, Sensitivity, Specificity\n",
            "method"
        );
        for r in &self.rows {
            s.push_str(&format!("{:width$}  {}\n", r.method, r.format_row()));
        }
        s
    }
}

/// One method's predictions on the test split.
pub struct MethodOutput {
    pub name: String,
    pub input: Option<EvalInput>,
    pub threshold: Option<f64>,
    pub note: Option<String>,
}

/// Parse an external prediction file `row_id,predicted_label` keyed by
/// 0-based test-split row index.
pub fn read_external_predictions(path: &Path, n_rows: usize) -> Result<Vec<bool>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = vec![None; n_rows];
    for rec in rdr.records() {
        let rec = rec?;
        let id: usize = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Schema("bad row_id".into()))?;
        let label = match rec.get(1).map(str::trim) {
            Some("1") | Some("true") => true,
            Some("0") | Some("false") => false,
            other => return Err(Error::Schema(format!("bad predicted_label {other:?}"))),
        };
        *out.get_mut(id)
            .ok_or_else(|| Error::Schema(format!("row_id {id} out of range")))? = Some(label);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| Error::Schema(format!("missing prediction for row {i}"))))
        .collect()
}

/// Evaluate methods on the test split; the first method is the reference
/// for p-values. All methods share the bootstrap seed so their streams pair.
pub fn compare_methods(
    methods: &[MethodOutput],
    test: &TabularDataset,
    groups: &GroupDefinition,
    n_boot: usize,
    seed: u64,
) -> Result<ComparisonTable> {
    let reports: Vec<Option<Result<EvalReport>>> = methods
        .iter()
        .map(|m| m.input.as_ref().map(|inp| bootstrap_eval(inp, Some(groups), m.threshold, n_boot, seed)))
        .collect();
    let _ = test;
    let base = match reports.first() {
        Some(Some(Ok(r))) => Some(r.clone()),
        _ => None,
    };
    let mut rows = Vec::new();
    for (m, rep) in methods.iter().zip(reports) {
        let row = match rep {
            Some(Ok(r)) => {
                let p_values = match &base {
                    Some(b) => r
                        .streams
                        .iter()
                        .filter_map(|(k, s)| {
                            let p = bootstrap_diff_test(s, b.streams.get(k)?).ok()?;
                            Some((k.clone(), p))
                        })
                        .collect(),
                    None => BTreeMap::new(),
                };
                ComparisonRow {
                    method: m.name.clone(),
                    available: true,
                    note: m.note.clone(),
                    threshold: m.threshold,
                    metrics: r.metrics,
                    p_values,
                }
            }
            Some(Err(e)) => unavailable(&m.name, format!("evaluation failed: {e}")),
            None => unavailable(&m.name, m.note.clone().unwrap_or_else(|| "no predictions".into())),
        };
        rows.push(row);
    }
    Ok(ComparisonTable { n_boot, rows })
}

fn unavailable(method: &str, note: String) -> ComparisonRow {
    ComparisonRow {
        method: method.to_string(),
        available: false,
        note: Some(note),
        threshold: None,
        metrics: Vec::new(),
        p_values: BTreeMap::new(),
    }
}

pub const METHOD_BASELINE: &str = "Baseline";
pub const METHOD_SELECTED: &str = "Selected";
pub const METHOD_REWEIGH: &str = "Reweigh (pre-process)";
pub const METHOD_EO_POST: &str = "Equalized odds post-processing (post-process)";
pub const METHOD_BLIND: &str = "Under blindness";

fn scored_method(name: &str, model: &FittedModel, prep: &Prepared) -> Result<MethodOutput> {
    let valid_scores = model.predict_proba(&prep.splits.valid)?;
    let threshold = youden_threshold(&valid_scores, &labels_of(&prep.splits.valid))?.threshold;
    let test_scores = model.predict_proba(&prep.splits.test)?;
    Ok(MethodOutput {
        name: name.to_string(),
        input: Some(EvalInput::from_scores(test_scores, threshold, labels_of(&prep.splits.test))),
        threshold: Some(threshold),
        note: None,
    })
}

fn failed(name: &str, e: Error) -> MethodOutput {
    MethodOutput {
        name: name.to_string(),
        input: None,
        threshold: None,
        note: Some(e.to_string()),
    }
}

/// Build predictions for the baseline, the selected candidate and every
/// built-in comparator, plus any external prediction files.
pub fn method_outputs(
    prep: &Prepared,
    config: &RunConfig,
    baseline: &FittedModel,
    cloud: &ModelCloud,
    selected_id: usize,
    externals: &[(String, PathBuf)],
) -> Result<Vec<MethodOutput>> {
    let test_labels = labels_of(&prep.splits.test);
    let mut out = vec![scored_method(METHOD_BASELINE, baseline, prep)?];

    let cand = cloud
        .candidate(selected_id)
        .ok_or_else(|| Error::InvalidArgument(format!("no candidate {selected_id}")))?;
    let selected = cloud.fitted_model(selected_id, &prep.splits.train)?;
    let test_scores = selected.predict_proba(&prep.splits.test)?;
    out.push(MethodOutput {
        name: METHOD_SELECTED.to_string(),
        input: Some(EvalInput::from_scores(test_scores, cand.threshold, test_labels.clone())),
        threshold: Some(cand.threshold),
        note: Some(format!("candidate {selected_id}")),
    });

    let reweighed = reweigh_weights(&prep.splits.train, &prep.sensitive).and_then(|(_, w)| {
        fit_weighted_logistic(&prep.splits.train, Some(&w), &BTreeSet::new(), &config.fit)
    });
    out.push(match reweighed {
        Ok(m) => scored_method(METHOD_REWEIGH, &m, prep)?,
        Err(e) => failed(METHOD_REWEIGH, e),
    });

    let post = || -> Result<MethodOutput> {
        let min = config.rank.min_group_size;
        let base_valid: Vec<bool> = baseline
            .predict_proba(&prep.splits.valid)?
            .iter()
            .map(|&p| p >= out[0].threshold.unwrap_or(0.5))
            .collect();
        let (g_valid, _) = joint_grouping(&prep.splits.valid, &prep.sensitive, min)?;
        let policy = eo_postprocess_fit(&base_valid, &labels_of(&prep.splits.valid), &g_valid)?;
        let base_test: Vec<bool> = baseline
            .predict_proba(&prep.splits.test)?
            .iter()
            .map(|&p| p >= out[0].threshold.unwrap_or(0.5))
            .collect();
        // Test groups use the validation grouping's labels; unseen small groups map to its "others".
        let (_, test_groups) = joint_grouping(&prep.splits.test, &prep.sensitive, 0)?;
        let test_groups: Vec<String> = test_groups
            .into_iter()
            .map(|g| {
                if policy.groups.contains_key(&g) {
                    g
                } else {
                    policy
                        .groups
                        .keys()
                        .find(|k| k.eq_ignore_ascii_case("others"))
                        .cloned()
                        .unwrap_or(g)
                }
            })
            .collect();
        let predicted = eo_postprocess_apply(&policy, &base_test, &test_groups, seed::derive(config.eval_seed, &[seed::TAG_POSTPROCESS]))?;
        Ok(MethodOutput {
            name: METHOD_EO_POST.to_string(),
            input: Some(EvalInput::from_labels(predicted, test_labels.clone())),
            threshold: None,
            note: None,
        })
    };
    let post = post().unwrap_or_else(|e| failed(METHOD_EO_POST, e));
    out.push(post);

    out.push(match under_blindness(&prep.splits.train, &prep.sensitive, &config.fit) {
        Ok(m) => scored_method(METHOD_BLIND, &m, prep)?,
        Err(e) => failed(METHOD_BLIND, e),
    });

    for (name, path) in externals {
        out.push(match read_external_predictions(path, prep.splits.test.n_rows()) {
            Ok(p) => MethodOutput {
                name: name.clone(),
                input: Some(EvalInput::from_labels(p, test_labels.clone())),
                threshold: None,
                note: Some(format!("external: {}", path.display())),
            },
            Err(e) => failed(name, e),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelExplanation {
    pub odds_ratios: Vec<OddsRatioRow>,
    pub exclusion_case: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub selected_id: usize,
    pub baseline: ModelExplanation,
    pub selected: ModelExplanation,
    pub importance: ImportanceComparison,
    pub shap_base_value_baseline: f64,
    pub shap_base_value_selected: f64,
    pub background_rows: usize,
    pub explain_rows: usize,
}

fn subsample(ds: &TabularDataset, n: usize, root: u64, tag: u64) -> TabularDataset {
    let n = n.min(ds.n_rows());
    let mut idx = sample(&mut seed::rng(root, &[seed::TAG_SUBSAMPLE, tag]), ds.n_rows(), n).into_vec();
    idx.sort_unstable();
    ds.subset(&idx)
}

/// Odds ratios with Fisher-information standard errors and SHAP importance
/// shifts between the baseline and the selected candidate.
pub fn explain(
    prep: &Prepared,
    config: &RunConfig,
    baseline: &FittedModel,
    cloud: &ModelCloud,
    selected_id: usize,
) -> Result<(Explanation, ShapMatrix, ShapMatrix)> {
    let selected = cloud.fitted_model(selected_id, &prep.splits.train)?;
    let background = subsample(&prep.splits.train, config.shap_background, config.eval_seed, 0);
    let explain_rows = subsample(&prep.splits.valid, config.shap_explain, config.eval_seed, 1);
    let shap_base = linear_shap(baseline, &background, &explain_rows)?;
    let shap_sel = linear_shap(&selected, &background, &explain_rows)?;
    let importance = compare_importance(&shap_base, &shap_sel)?;
    let expl = Explanation {
        selected_id,
        baseline: ModelExplanation {
            odds_ratios: baseline.odds_ratio_table()?,
            exclusion_case: baseline.exclusion_case.iter().cloned().collect(),
        },
        selected: ModelExplanation {
            odds_ratios: selected.odds_ratio_table()?,
            exclusion_case: selected.exclusion_case.iter().cloned().collect(),
        },
        importance,
        shap_base_value_baseline: shap_base.base_value,
        shap_base_value_selected: shap_sel.base_value,
        background_rows: background.n_rows(),
        explain_rows: explain_rows.n_rows(),
    };
    Ok((expl, shap_base, shap_sel))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupComparison {
    pub baseline: SubgroupGapReport,
    pub selected: SubgroupGapReport,
}

/// Build and rank the cloud for prepared data.
pub fn build_ranked_cloud(prep: &Prepared, config: &RunConfig) -> Result<(FittedModel, RankedCloud)> {
    let mut cloud = build_cloud(
        &prep.splits.train,
        &prep.splits.valid,
        &prep.sensitive,
        &config.sampler,
        &config.fit,
    )?;
    let baseline = cloud.cases[0]
        .optimum
        .clone()
        .ok_or_else(|| Error::InvalidArgument("baseline fit failed".into()))?;
    let groups = GroupDefinition::build(
        &prep.splits.valid,
        &prep.sensitive,
        config.rank.group_mode,
        config.rank.min_group_size,
    )?;
    rank_cloud(&mut cloud, &prep.splits.valid, &groups, &config.rank)?;
    Ok((
        baseline,
        RankedCloud {
            rank: config.rank.clone(),
            cloud,
        },
    ))
}

/// Evaluation on the test split plus per-attribute subgroup gaps.
pub struct EvaluationOutput {
    pub evaluation: ComparisonTable,
    pub subgroups: SubgroupComparison,
}

pub fn evaluate_stage(
    prep: &Prepared,
    config: &RunConfig,
    cloud: &ModelCloud,
    selected_id: usize,
    externals: &[(String, PathBuf)],
) -> Result<EvaluationOutput> {
    let baseline = baseline_of(cloud)?;
    let test_groups = GroupDefinition::build(
        &prep.splits.test,
        &prep.sensitive,
        config.rank.group_mode,
        config.rank.min_group_size,
    )?;
    let methods = method_outputs(prep, config, &baseline, cloud, selected_id, externals)?;
    let evaluation = compare_methods(&methods, &prep.splits.test, &test_groups, config.n_boot, config.eval_seed)?;

    let per_attr = GroupDefinition::build(
        &prep.splits.test,
        &prep.sensitive,
        GroupMode::PerAttribute,
        config.rank.min_group_size,
    )?;
    let labels = labels_of(&prep.splits.test);
    let gaps = |m: &MethodOutput| -> Result<SubgroupGapReport> {
        let inp = m
            .input
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no predictions", m.name)))?;
        subgroup_gaps(&inp.predicted, &labels, &per_attr)
    };
    let subgroups = SubgroupComparison {
        baseline: gaps(&methods[0])?,
        selected: gaps(&methods[1])?,
    };
    Ok(EvaluationOutput { evaluation, subgroups })
}

impl EvaluationOutput {
    pub fn write_to(&self, dir: &Path, config_hash: &str) -> Result<()> {
        write(dir, EVALUATION_FILE, &Artifact::new(config_hash, &self.evaluation).to_bytes()?)?;
        write(dir, EVALUATION_TABLE_FILE, self.evaluation.to_text().as_bytes())?;
        write(dir, SUBGROUP_FILE, &Artifact::new(config_hash, &self.subgroups).to_bytes()?)
    }
}

pub struct ExplanationOutput {
    pub explanation: Explanation,
    pub shap_baseline: ShapMatrix,
    pub shap_selected: ShapMatrix,
}

pub fn explain_stage(prep: &Prepared, config: &RunConfig, cloud: &ModelCloud, selected_id: usize) -> Result<ExplanationOutput> {
    let baseline = baseline_of(cloud)?;
    let (explanation, shap_baseline, shap_selected) = explain(prep, config, &baseline, cloud, selected_id)?;
    Ok(ExplanationOutput {
        explanation,
        shap_baseline,
        shap_selected,
    })
}

impl ExplanationOutput {
    pub fn write_to(&self, dir: &Path, config_hash: &str) -> Result<()> {
        write(dir, EXPLANATION_FILE, &Artifact::new(config_hash, &self.explanation).to_bytes()?)?;
        write(dir, SHAP_BASELINE_CSV, self.shap_baseline.to_csv().as_bytes())?;
        write(dir, SHAP_SELECTED_CSV, self.shap_selected.to_csv().as_bytes())
    }
}

fn baseline_of(cloud: &ModelCloud) -> Result<FittedModel> {
    cloud
        .cases
        .first()
        .and_then(|c| c.optimum.clone())
        .ok_or_else(|| Error::InvalidArgument("cloud has no baseline optimum".into()))
}

/// Everything a pipeline run produces, before serialization.
pub struct PipelineOutput {
    pub config_hash: String,
    pub cloud: RankedCloud,
    pub cloud_bytes: Vec<u8>,
    pub tabulation: ExclusionTabulation,
    pub selection: SelectionRecord,
    pub evaluation: EvaluationOutput,
    pub explanation: ExplanationOutput,
}

impl PipelineOutput {
    pub fn baseline(&self) -> &FittedModel {
        self.cloud.cloud.cases[0].optimum.as_ref().expect("baseline optimum")
    }
}

pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutput> {
    par::with_threads(config.execution.threads, || run_pipeline_inner(config))
}

fn run_pipeline_inner(config: &RunConfig) -> Result<PipelineOutput> {
    let hash = config.hash();
    if config.sensitive.as_ref().is_some_and(|s| s.is_empty()) {
        return Err(Error::InvalidArgument("no sensitive features configured".into()));
    }
    let prep = prepare(config)?;
    tracing::info!(
        train = prep.splits.train.n_rows(),
        valid = prep.splits.valid.n_rows(),
        test = prep.splits.test.n_rows(),
        "data prepared"
    );
    let (_, ranked) = build_ranked_cloud(&prep, config)?;
    tracing::info!(candidates = ranked.cloud.candidates.len(), "cloud ranked");
    let cloud_bytes = Artifact::new(&hash, &ranked).to_bytes()?;
    let tabulation = exclusion_tabulation(&ranked.cloud, config.bands)?;
    let selection = default_selection(&ranked.cloud, &cloud_bytes)?;
    let evaluation = evaluate_stage(&prep, config, &ranked.cloud, selection.selected_id, &[])?;
    let explanation = explain_stage(&prep, config, &ranked.cloud, selection.selected_id)?;
    Ok(PipelineOutput {
        config_hash: hash,
        cloud: ranked,
        cloud_bytes,
        tabulation,
        selection,
        evaluation,
        explanation,
    })
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

impl PipelineOutput {
    /// Write every artifact into `dir`.
    pub fn write_to(&self, dir: &Path, config: &RunConfig) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let h = &self.config_hash;
        write(dir, CONFIG_FILE, &Artifact::new(h, config.without_execution()).to_bytes()?)?;
        write(dir, CLOUD_FILE, &self.cloud_bytes)?;
        write(dir, TABULATION_FILE, &Artifact::new(h, &self.tabulation).to_bytes()?)?;
        write(dir, DEFAULT_SELECTION_FILE, &Artifact::new(h, &self.selection).to_bytes()?)?;
        self.evaluation.write_to(dir, h)?;
        self.explanation.write_to(dir, h)
    }
}

/// Ranked cloud, its exact bytes and config hash, read back from `dir`.
pub fn load_cloud(dir: &Path) -> Result<(RankedCloud, Vec<u8>, String)> {
    let path = dir.join(CLOUD_FILE);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let a: Artifact<RankedCloud> = serde_json::from_slice(&bytes)?;
    if a.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema(format!("unsupported schema_version {}", a.schema_version)));
    }
    Ok((a.body, bytes, a.config_hash))
}

/// Load a run directory, check it matches `config`, and resolve the selection.
pub fn load_run(config: &RunConfig, dir: &Path) -> Result<(Prepared, RankedCloud, SelectionRecord)> {
    let (ranked, bytes, hash) = load_cloud(dir)?;
    if hash != config.hash() {
        return Err(Error::Schema(format!(
            "{} was produced by config {hash}, not {}",
            dir.display(),
            config.hash()
        )));
    }
    let selection = resolve_selection(dir, &ranked.cloud, &bytes)?;
    Ok((prepare(config)?, ranked, selection))
}

pub fn default_selection(cloud: &ModelCloud, cloud_bytes: &[u8]) -> Result<SelectionRecord> {
    let top = cloud
        .top_ranked()
        .ok_or_else(|| Error::InvalidArgument("cloud is not ranked".into()))?;
    Ok(SelectionRecord {
        source: SelectionSource::Default,
        cloud_fingerprint: fingerprint(cloud_bytes),
        selected_id: top.id,
        rank: top.rank,
        case: cloud.case_of(top).label(),
        justification: None,
        session_id: None,
        committed_at: None,
    })
}

/// Candidate chosen for downstream stages: the committed selection in `dir`
/// when present and matching the cloud, otherwise rank 1.
pub fn resolve_selection(dir: &Path, cloud: &ModelCloud, cloud_bytes: &[u8]) -> Result<SelectionRecord> {
    let committed = dir.join(SELECTION_FILE);
    if committed.exists() {
        let rec: Artifact<SelectionRecord> = read_artifact(&committed)?;
        if rec.body.cloud_fingerprint != fingerprint(cloud_bytes) {
            return Err(Error::Schema("committed selection refers to a different cloud".into()));
        }
        if cloud.candidate(rec.body.selected_id).is_none() {
            return Err(Error::Schema(format!("selected id {} not in cloud", rec.body.selected_id)));
        }
        return Ok(rec.body);
    }
    default_selection(cloud, cloud_bytes)
}

/// Fairness metrics of a candidate on any split, using its stored threshold.
pub fn candidate_metrics(
    cloud: &ModelCloud,
    id: usize,
    data: &TabularDataset,
    groups: &GroupDefinition,
) -> Result<crate::fairness::FairnessMetrics> {
    let c = cloud
        .candidate(id)
        .ok_or_else(|| Error::InvalidArgument(format!("no candidate {id}")))?;
    let design = crate::glm::Design::new(data, cloud.case_of(c).columns())?;
    let predicted: Vec<bool> = design.probabilities(&c.beta)?.iter().map(|&p| p >= c.threshold).collect();
    fairness_metrics(&predicted, &labels_of(data), groups)
}
