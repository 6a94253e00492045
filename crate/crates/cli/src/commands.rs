//! Subcommand implementations. Each pipeline stage maps failures to its own
//! exit code so scripts can tell where a run stopped.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fairsel_core::data::{self, SynthConfig};
use fairsel_core::pipeline;
use fairsel_core::fairness::{exclusion_tabulation, GroupMode, MetricName};
use fairsel_core::pipeline::{
    build_ranked_cloud, default_selection, evaluate_stage, explain_stage, load_run, prepare, Artifact, RunConfig, CLOUD_FILE,
    CONFIG_FILE, DEFAULT_SELECTION_FILE, TABULATION_FILE,
};
use fairsel_core::par;

#[derive(Debug, Parser)]
#[command(name = "fairsel", version, about = "Fairness-aware selection among nearly-optimal logistic models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample, rank and evaluate a model cloud; write all artifacts.
    Pipeline(RunArgs),
    /// Compare the selected model with baseline and mitigation methods.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Extra method as NAME=PATH; the CSV holds `row_id,predicted_label` over test rows.
        #[arg(long = "method", value_name = "NAME=PATH")]
        methods: Vec<String>,
    },
    /// Odds ratios and SHAP comparison for the selected model.
    Explain(RunArgs),
    /// Serve the ranked cloud and selection sessions over HTTP.
    Serve {
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Write a synthetic dataset as CSV plus its schema and ground truth.
    Synth {
        #[command(flatten)]
        synth: SynthArgs,
        /// Output directory for data.csv, schema.json and truth.json.
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20_000)]
    pub n_rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3.0)]
    pub bias_strength: f64,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// RunConfig JSON. Without it a synthetic dataset is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Synthetic rows, when no config is given.
    #[arg(long)]
    pub n_rows: Option<usize>,
    /// Sets every seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Synthetic bias strength, when no config is given.
    #[arg(long)]
    pub bias_strength: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub n_target: Option<usize>,
    #[arg(long)]
    pub n_boot: Option<usize>,
    /// Comma-separated sensitive feature names.
    #[arg(long, value_delimiter = ',')]
    pub sensitive: Option<Vec<String>>,
    /// `per_attribute` or `intersectional`.
    #[arg(long)]
    pub group_mode: Option<String>,
    /// Comma-separated metric order, e.g. `eod,eop,ber`.
    #[arg(long, value_delimiter = ',')]
    pub metric_order: Option<Vec<String>>,
}

fn parse_snake<T: serde::de::DeserializeOwned>(s: &str) -> anyhow::Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).with_context(|| format!("unknown value `{s}`"))
}

impl RunArgs {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_json_file(p).with_context(|| format!("reading config {}", p.display()))?,
            None => RunConfig::synthetic(SynthConfig {
                n_rows: 20_000,
                seed: 0,
                bias_strength: 3.0,
            }),
        };
        if let pipeline::DataSource::Synthetic(s) = &mut cfg.data {
            if let Some(n) = self.n_rows {
                s.n_rows = n;
            }
            if let Some(b) = self.bias_strength {
                s.bias_strength = b;
            }
            if let Some(seed) = self.seed {
                s.seed = seed;
            }
        } else if self.n_rows.is_some() || self.bias_strength.is_some() {
            anyhow::bail!("--n-rows and --bias-strength apply only to synthetic data");
        }
        if let Some(seed) = self.seed {
            cfg.split_seed = seed;
            cfg.sampler.seed = seed;
            cfg.eval_seed = seed;
        }
        if let Some(e) = self.epsilon {
            cfg.sampler.epsilon = e;
        }
        if let Some(n) = self.n_target {
            cfg.sampler.n_target_per_case = n;
        }
        if let Some(n) = self.n_boot {
            cfg.n_boot = n;
        }
        if let Some(s) = &self.sensitive {
            cfg.sensitive = Some(s.clone());
        }
        if let Some(m) = &self.group_mode {
            cfg.rank.group_mode = parse_snake::<GroupMode>(m)?;
        }
        if let Some(order) = &self.metric_order {
            cfg.rank.metric_order = order.iter().map(|m| parse_snake::<MetricName>(m)).collect::<anyhow::Result<_>>()?;
        }
        if let Some(t) = self.threads {
            cfg.execution.threads = t;
        }
        if let Some(o) = &self.out {
            cfg.execution.output_dir = o.clone();
        }
        if cfg.execution.output_dir.as_os_str().is_empty() {
            cfg.execution.output_dir = PathBuf::from("out");
        }
        cfg.sampler.validate()?;
        Ok(cfg)
    }
}

/// A failed stage and the exit code reported for it.
#[derive(Debug)]
pub struct StageError {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INGEST: u8 = 3;
pub const EXIT_CLOUD: u8 = 4;
pub const EXIT_EVALUATE: u8 = 5;
pub const EXIT_EXPLAIN: u8 = 6;
pub const EXIT_SERVE: u8 = 7;

trait Stage<T> {
    fn stage(self, code: u8, what: &str) -> Result<T, StageError>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for Result<T, E> {
    fn stage(self, code: u8, what: &str) -> Result<T, StageError> {
        self.map_err(|e| StageError {
            code,
            error: e.into().context(what.to_string()),
        })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Pipeline(args) => {
            let cfg = args.resolve().stage(EXIT_CONFIG, "configuration")?;
            par::with_threads(cfg.execution.threads, || cmd_pipeline(&cfg))
        }
        Command::Evaluate { run, methods } => {
            let cfg = run.resolve().stage(EXIT_CONFIG, "configuration")?;
            let externals = methods
                .iter()
                .map(|m| {
                    m.split_once('=')
                        .map(|(n, p)| (n.to_string(), PathBuf::from(p)))
                        .ok_or_else(|| anyhow::anyhow!("--method expects NAME=PATH, got `{m}`"))
                })
                .collect::<anyhow::Result<Vec<_>>>()
                .stage(EXIT_CONFIG, "configuration")?;
            par::with_threads(cfg.execution.threads, || cmd_evaluate(&cfg, &externals))
        }
        Command::Explain(args) => {
            let cfg = args.resolve().stage(EXIT_CONFIG, "configuration")?;
            par::with_threads(cfg.execution.threads, || cmd_explain(&cfg))
        }
        Command::Serve { out, bind } => {
            let rt = tokio::runtime::Runtime::new().stage(EXIT_SERVE, "starting runtime")?;
            rt.block_on(crate::service::serve(&out, &bind)).stage(EXIT_SERVE, "service")
        }
        Command::Synth { synth, out } => cmd_synth(&synth, &out).stage(EXIT_INGEST, "synthetic data"),
    }
}

pub fn cmd_pipeline(cfg: &RunConfig) -> Result<(), StageError> {
    let dir = &cfg.execution.output_dir;
    let hash = cfg.hash();
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .stage(EXIT_CONFIG, "output directory")?;
    let prep = prepare(cfg).stage(EXIT_INGEST, "ingest and split")?;
    let (_, ranked) = build_ranked_cloud(&prep, cfg).stage(EXIT_CLOUD, "cloud sampling and ranking")?;
    let cloud_bytes = Artifact::new(&hash, &ranked).to_bytes().stage(EXIT_CLOUD, "serializing cloud")?;
    let tab = exclusion_tabulation(&ranked.cloud, cfg.bands).stage(EXIT_CLOUD, "tabulation")?;
    let selection = default_selection(&ranked.cloud, &cloud_bytes)
        .stage(EXIT_CLOUD, "default selection")?;
    (|| -> anyhow::Result<()> {
        write_file(&dir.join(CONFIG_FILE), &Artifact::new(&hash, cfg.without_execution()).to_bytes()?)?;
        write_file(&dir.join(CLOUD_FILE), &cloud_bytes)?;
        write_file(&dir.join(TABULATION_FILE), &Artifact::new(&hash, &tab).to_bytes()?)?;
        write_file(&dir.join(DEFAULT_SELECTION_FILE), &Artifact::new(&hash, &selection).to_bytes()?)?;
        Ok(())
    })()
    .stage(EXIT_CLOUD, "writing cloud artifacts")?;
    eprintln!(
        "cloud: {} candidates, default selection {} ({}), FRI {:.4}",
        ranked.cloud.candidates.len(),
        selection.selected_id,
        selection.case,
        ranked.cloud.candidate(selection.selected_id).and_then(|c| c.fri).unwrap_or(f64::NAN)
    );

    let eval = evaluate_stage(&prep, cfg, &ranked.cloud, selection.selected_id, &[]).stage(EXIT_EVALUATE, "evaluation")?;
    eval.write_to(dir, &hash).stage(EXIT_EVALUATE, "writing evaluation")?;
    print!("{}", eval.evaluation.to_text());
    let expl = explain_stage(&prep, cfg, &ranked.cloud, selection.selected_id).stage(EXIT_EXPLAIN, "explanation")?;
    expl.write_to(dir, &hash).stage(EXIT_EXPLAIN, "writing explanation")?;
    eprintln!("artifacts written to {}", dir.display());
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig, externals: &[(String, PathBuf)]) -> Result<(), StageError> {
    let dir = &cfg.execution.output_dir;
    let (prep, ranked, selection) = load_run(cfg, dir).stage(EXIT_INGEST, "loading run")?;
    let eval = evaluate_stage(&prep, cfg, &ranked.cloud, selection.selected_id, externals)
        .stage(EXIT_EVALUATE, "evaluation")?;
    eval.write_to(dir, &cfg.hash()).stage(EXIT_EVALUATE, "writing evaluation")?;
    eprintln!("selected candidate {} ({:?})", selection.selected_id, selection.source);
    print!("{}", eval.evaluation.to_text());
    Ok(())
}

pub fn cmd_explain(cfg: &RunConfig) -> Result<(), StageError> {
    let dir = &cfg.execution.output_dir;
    let (prep, ranked, selection) = load_run(cfg, dir).stage(EXIT_INGEST, "loading run")?;
    let expl = explain_stage(&prep, cfg, &ranked.cloud, selection.selected_id).stage(EXIT_EXPLAIN, "explanation")?;
    expl.write_to(dir, &cfg.hash()).stage(EXIT_EXPLAIN, "writing explanation")?;
    println!("{:<24} {:>10} {:>10} {:>10}", "feature", "baseline", "selected", "delta");
    for r in &expl.explanation.importance.rows {
        println!("{:<24} {:>10.4} {:>10.4} {:>10.4}", r.feature, r.baseline, r.selected, r.delta);
    }
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs, out: &Path) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        n_rows: args.n_rows,
        seed: args.seed,
        bias_strength: args.bias_strength,
    };
    let (ds, truth) = data::generate_synthetic(&cfg)?;
    let schema = data::synthetic_schema();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    ds.write_csv(&out.join("data.csv"), &schema.outcome)?;
    write_file(&out.join("schema.json"), &serde_json::to_vec_pretty(&schema)?)?;
    write_file(&out.join("truth.json"), &serde_json::to_vec_pretty(&truth)?)?;
    eprintln!("wrote {} rows to {}", ds.n_rows(), out.display());
    Ok(())
}
