//! `uplift` — command-line driver. Each subcommand runs one stage and
//! persists its artifact; `pipeline` runs all stages from a JSON config.
//!
//! Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use uplift_core::cate::DmlConfig;
use uplift_core::dataset::{ColumnMapping, SyntheticConfig};
use uplift_core::gcn::GcnConfig;
use uplift_core::pipeline::{self, stages, StructureSection};
use uplift_core::teacher::GbdtParams;
use uplift_core::{Result, UpliftError};

#[derive(Parser)]
#[command(
    name = "uplift",
    version,
    about = "Causal-weighted graph uplift modelling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known effects.
    Simulate(SimulateArgs),
    /// Load an external CSV through a column mapping into the internal format.
    Ingest(IngestArgs),
    /// Shuffle and split a dataset into train and test files.
    Split(SplitArgs),
    /// Fit the teacher model and write soft labels.
    Distill(DistillArgs),
    /// Estimate per-feature causal weights with cross-fitted DML heads.
    Cate(CateArgs),
    /// Learn a DAG over the features and export the GCN adjacency.
    Structure(StructureArgs),
    /// Train the GCN S-learner (causal-weighted when --cate is given).
    Train(TrainArgs),
    /// Predict potential outcomes and uplift with a trained GCN.
    Predict(PredictArgs),
    /// Score predictions: MSE, absolute ITE error, AUUC.
    Evaluate(EvaluateArgs),
    /// Run every stage from a JSON config file.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// JSON file with `features`, `treatment` and `outcome` column names.
    #[arg(long)]
    mapping: Option<PathBuf>,
    #[arg(long)]
    max_rows: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    load_report: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 2.0 / 3.0)]
    train_frac: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
}

#[derive(Args)]
struct DistillArgs {
    /// Training data.
    #[arg(long)]
    data: PathBuf,
    /// JSON file with teacher parameters (same schema as the config's `teacher`).
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    soft_out: PathBuf,
}

#[derive(Args)]
struct CateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    soft: PathBuf,
    #[arg(long)]
    seed: u64,
    /// JSON file with DML parameters (same schema as the config's `dml`).
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    weights_out: PathBuf,
    #[arg(long)]
    summary_out: Option<PathBuf>,
}

#[derive(Args)]
struct StructureArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file with search parameters (same schema as the config's `structure`).
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Edge list; defaults to the output path with a `.txt` extension.
    #[arg(long)]
    edges_out: Option<PathBuf>,
    /// Normalized adjacency CSV; defaults to `adjacency.csv` next to the output.
    #[arg(long)]
    adjacency_out: Option<PathBuf>,
    /// Graph over features, treatment and outcome (needs
    /// `include_treatment_outcome`); defaults to `dag_full.json` next to the output.
    #[arg(long)]
    full_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    dag: PathBuf,
    /// CATE model; omit to train the plain GCN.
    #[arg(long)]
    cate: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// JSON file with GCN hyperparameters (same schema as the config's `gcn`).
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Must match the CATE model used in training (omit for a plain GCN).
    #[arg(long)]
    cate: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    #[arg(long)]
    curve_out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
}

fn read_params<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| UpliftError::Config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| UpliftError::Config(format!("invalid {}: {e}", p.display())))
        }
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.with_file_name(name)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => {
            let cfg = SyntheticConfig {
                n: a.n,
                d: a.d,
                sigma: a.sigma,
                eta: a.eta,
                seed: a.seed,
            };
            stages::simulate(&cfg, &a.out).map(drop)
        }
        Command::Ingest(a) => {
            let mapping: ColumnMapping = read_params(a.mapping.as_deref())?;
            let report = a
                .load_report
                .unwrap_or_else(|| sibling(&a.out, "load_report.json"));
            stages::ingest(&a.input, &mapping, a.max_rows, &a.out, &report).map(drop)
        }
        Command::Split(a) => {
            stages::split(&a.data, a.train_frac, a.seed, &a.train_out, &a.test_out)
        }
        Command::Distill(a) => {
            let params: GbdtParams = read_params(a.params.as_deref())?;
            params.validate()?;
            stages::distill(&a.data, &params, &a.model_out, &a.soft_out)
        }
        Command::Cate(a) => {
            let mut cfg: DmlConfig = read_params(a.params.as_deref())?;
            cfg.seed = a.seed;
            let summary = a
                .summary_out
                .unwrap_or_else(|| sibling(&a.model_out, "cate_summary.json"));
            stages::cate(
                &a.data,
                &a.soft,
                &cfg,
                &a.model_out,
                &a.weights_out,
                &summary,
            )
        }
        Command::Structure(a) => {
            let section: StructureSection = read_params(a.params.as_deref())?;
            let opts = section.options(a.seed);
            let edges = a.edges_out.unwrap_or_else(|| a.out.with_extension("txt"));
            let adjacency = a
                .adjacency_out
                .unwrap_or_else(|| sibling(&a.out, "adjacency.csv"));
            let full = section.include_treatment_outcome.then(|| {
                a.full_out
                    .unwrap_or_else(|| sibling(&a.out, "dag_full.json"))
            });
            let outputs = stages::StructureOutputs {
                dag: &a.out,
                edges: &edges,
                adjacency: &adjacency,
                full_dag: full.as_deref(),
            };
            stages::structure(&a.data, &opts, &outputs).map(drop)
        }
        Command::Train(a) => {
            let mut cfg: GcnConfig = read_params(a.params.as_deref())?;
            cfg.seed = a.seed;
            cfg.validate()?;
            stages::train(&a.data, &a.dag, a.cate.as_deref(), &cfg, &a.out).map(drop)
        }
        Command::Predict(a) => {
            stages::predict(&a.model, &a.data, a.cate.as_deref(), &a.out).map(drop)
        }
        Command::Evaluate(a) => {
            let echo = json!({
                "pred": a.pred.display().to_string(),
                "data": a.data.display().to_string(),
            });
            stages::evaluate(&a.pred, &a.data, echo, &a.out, a.curve_out.as_deref()).map(drop)
        }
        Command::Pipeline(a) => {
            let outcome = pipeline::run_from_path(&a.config)?;
            println!("{}", outcome.output_dir.join("report.json").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
