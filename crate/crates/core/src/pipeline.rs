//! Config-driven orchestration. Every stage reads and writes files so that the
//! full pipeline and the individual CLI subcommands share one code path:
//!
//! `data.csv → train.csv/test.csv → teacher.json + soft_labels.csv →
//! cate.json + weights.csv → dag.json + adjacency.csv → gcn_*.json →
//! predictions_*.csv → report*.json`.
//!
//! The global seed drives every stochastic stage (generator, split, DML fold
//! assignment, structure restarts, GCN initialization and shuffling).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::cate::{multi_head_cate, CateModel, DmlConfig};
use crate::dataset::{self, ColumnMapping, Dataset, SyntheticConfig};
use crate::error::{Result, UpliftError};
use crate::eval::{self, write_json};
use crate::gcn::{self, GcnConfig, GcnModel, UpliftScores};
use crate::rng::RNG_ALGORITHM;
use crate::structure::{self, to_gcn_adjacency, DagStructure, GcnAdjacency, HillClimbOptions};
use crate::teacher::{self, GbdtModel, GbdtParams, SoftLabels};

/// Environment variable naming the output directory when the config has none.
pub const OUTPUT_DIR_ENV: &str = "UPLIFT_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "uplift-out";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        n: usize,
        d: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_eta")]
        eta: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        mapping: ColumnMapping,
        #[serde(default)]
        max_rows: Option<usize>,
    },
}

fn default_sigma() -> f64 {
    1.0
}

fn default_eta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StructureSection {
    pub max_iters: usize,
    pub restarts: usize,
    pub parent_cap: usize,
    pub restart_edge_prob: f64,
    /// Also learn a graph over features, treatment and outcome (reported as
    /// `dag_full.json`); the GCN always uses the feature-only subgraph.
    pub include_treatment_outcome: bool,
}

impl Default for StructureSection {
    fn default() -> Self {
        let o = HillClimbOptions::default();
        Self {
            max_iters: o.max_iters,
            restarts: o.restarts,
            parent_cap: o.parent_cap,
            restart_edge_prob: o.restart_edge_prob,
            include_treatment_outcome: false,
        }
    }
}

impl StructureSection {
    pub fn options(&self, seed: u64) -> HillClimbOptions {
        HillClimbOptions {
            max_iters: self.max_iters,
            restarts: self.restarts,
            parent_cap: self.parent_cap,
            seed,
            restart_edge_prob: self.restart_edge_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Required; validation fails without it.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSource,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default)]
    pub teacher: GbdtParams,
    #[serde(default)]
    pub dml: DmlConfig,
    #[serde(default)]
    pub structure: StructureSection,
    #[serde(default)]
    pub gcn: GcnConfig,
    /// Train the plain GCN next to the causal-weighted one.
    #[serde(default = "default_compare")]
    pub compare: bool,
}

fn default_train_frac() -> f64 {
    2.0 / 3.0
}

fn default_compare() -> bool {
    true
}

impl PipelineConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            UpliftError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| UpliftError::Config(format!("invalid config {}: {e}", path.display())))
    }

    /// Checks the config and resolves seeds and the output directory.
    pub fn validate(&self) -> Result<ResolvedConfig> {
        let seed = self
            .seed
            .ok_or_else(|| UpliftError::Config("`seed` is required".into()))?;
        match &self.dataset {
            DatasetSource::Synthetic { n, d, sigma, eta } => {
                SyntheticConfig {
                    n: *n,
                    d: *d,
                    sigma: *sigma,
                    eta: *eta,
                    seed,
                }
                .validate()?;
            }
            DatasetSource::Csv { path, .. } => {
                if !path.exists() {
                    return Err(UpliftError::Config(format!(
                        "dataset file {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(UpliftError::Config(format!(
                "train_frac must lie in (0, 1), got {}",
                self.train_frac
            )));
        }
        self.teacher.validate()?;
        self.gcn.validate()?;
        let output_dir = self
            .output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
        let mut dml = self.dml.clone();
        dml.seed = seed;
        let mut gcn = self.gcn.clone();
        gcn.seed = seed;
        Ok(ResolvedConfig {
            seed,
            output_dir,
            dml,
            gcn,
            structure: self.structure.options(seed),
            config: self.clone(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dml: DmlConfig,
    pub gcn: GcnConfig,
    pub structure: HillClimbOptions,
    pub config: PipelineConfig,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(UpliftError::MissingArtifact(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

fn write_soft_labels(soft: &SoftLabels, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["y_hat"])?;
    for v in &soft.y_hat {
        w.write_record([v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn read_soft_labels(path: &Path) -> Result<SoftLabels> {
    if !path.exists() {
        return Err(UpliftError::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut y_hat = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        y_hat.push(
            rec[0]
                .trim()
                .parse::<f64>()
                .map_err(|_| UpliftError::DataRow {
                    row: k + 1,
                    message: format!("soft label `{}` is not a number", &rec[0]),
                })?,
        );
    }
    Ok(SoftLabels { y_hat })
}

/// Stage functions shared by the pipeline and the CLI subcommands.
pub mod stages {
    use super::*;

    pub fn simulate(cfg: &SyntheticConfig, out: &Path) -> Result<Dataset> {
        let ds = dataset::generate_synthetic(cfg)?;
        ds.write_csv(out)?;
        Ok(ds)
    }

    pub fn ingest(
        path: &Path,
        mapping: &ColumnMapping,
        max_rows: Option<usize>,
        out: &Path,
        report_out: &Path,
    ) -> Result<Dataset> {
        let (ds, report) = dataset::load_csv_limited(path, mapping, max_rows)?;
        ds.write_csv(out)?;
        dataset::write_load_report(&report, report_out)?;
        Ok(ds)
    }

    pub fn split(
        data: &Path,
        train_frac: f64,
        seed: u64,
        train_out: &Path,
        test_out: &Path,
    ) -> Result<()> {
        let ds = Dataset::read_csv(data)?;
        let (train, test) = dataset::split(&ds, train_frac, seed)?;
        train.write_csv(train_out)?;
        test.write_csv(test_out)?;
        Ok(())
    }

    /// Fits the teacher on `[X, t] → y` and writes the model and the soft
    /// labels of the same rows.
    pub fn distill(
        train: &Path,
        params: &GbdtParams,
        model_out: &Path,
        soft_out: &Path,
    ) -> Result<()> {
        let ds = Dataset::read_csv(train)?;
        let x_aug = ds.x_with_treatment();
        let model = teacher::fit_gbdt(&x_aug, &ds.y, params)?;
        let soft = teacher::predict_soft(&model, &x_aug)?;
        write_text(model_out, &model.to_json()?)?;
        write_soft_labels(&soft, soft_out)
    }

    /// Soft labels for other rows from a saved teacher.
    pub fn score_teacher(model: &Path, data: &Path, soft_out: &Path) -> Result<()> {
        let model = GbdtModel::from_json(&read_text(model)?)?;
        let ds = Dataset::read_csv(data)?;
        write_soft_labels(
            &teacher::predict_soft(&model, &ds.x_with_treatment())?,
            soft_out,
        )
    }

    pub fn cate(
        train: &Path,
        soft: &Path,
        cfg: &DmlConfig,
        model_out: &Path,
        weights_out: &Path,
        summary_out: &Path,
    ) -> Result<()> {
        let ds = Dataset::read_csv(train)?;
        let soft = read_soft_labels(soft)?;
        let fit = multi_head_cate(&ds.x, &soft, cfg)?;
        let model = fit.model(&ds.feature_names, cfg);
        write_text(model_out, &model.to_json()?)?;
        fit.weights.write_csv(&ds.feature_names, weights_out)?;
        let summary = serde_json::json!({
            "theta_mean": ds.feature_names.iter().cloned().zip(fit.weights.theta_mean.iter().copied()).collect::<BTreeMap<_, _>>(),
            "degenerate": ds.feature_names.iter().cloned().zip(fit.weights.degenerate.iter().copied()).collect::<BTreeMap<_, _>>(),
            "heterogeneity_basis": fit.weights.heterogeneity_basis,
            "config": cfg,
        });
        write_json(&summary, summary_out)
    }

    pub struct StructureOutputs<'a> {
        pub dag: &'a Path,
        pub edges: &'a Path,
        pub adjacency: &'a Path,
        /// Written when learning over features, treatment and outcome.
        pub full_dag: Option<&'a Path>,
    }

    pub fn structure(
        train: &Path,
        opts: &HillClimbOptions,
        out: &StructureOutputs<'_>,
    ) -> Result<DagStructure> {
        let ds = Dataset::read_csv(train)?;
        let dag = match out.full_dag {
            Some(full_path) => {
                let (all, names) = ds.all_variables();
                let full = structure::hill_climb(&all, opts)?.best;
                write_text(full_path, &full.to_json()?)?;
                let mut edges_path = full_path.to_path_buf();
                edges_path.set_extension("txt");
                write_text(&edges_path, &full.edge_list(&names))?;
                let features: Vec<usize> = (0..ds.d()).collect();
                full.restrict(&features, &ds.x)?
            }
            None => structure::hill_climb(&ds.x, opts)?.best,
        };
        write_text(out.dag, &dag.to_json()?)?;
        write_text(out.edges, &dag.edge_list(&ds.feature_names))?;
        to_gcn_adjacency(&dag).write_csv(out.adjacency)?;
        Ok(dag)
    }

    fn load_weights(
        cate: Option<&Path>,
        ds: &Dataset,
    ) -> Result<Option<crate::cate::CausalWeights>> {
        cate.map(|p| CateModel::from_json(&read_text(p)?)?.weights_for(&ds.x))
            .transpose()
    }

    pub fn train(
        train: &Path,
        dag: &Path,
        cate: Option<&Path>,
        cfg: &GcnConfig,
        model_out: &Path,
    ) -> Result<GcnModel> {
        let ds = Dataset::read_csv(train)?;
        let dag = DagStructure::from_json(&read_text(dag)?)?;
        let a: GcnAdjacency = to_gcn_adjacency(&dag);
        let weights = load_weights(cate, &ds)?;
        let model = gcn::fit(&ds, weights.as_ref(), &a, cfg)?;
        write_text(model_out, &model.to_json()?)?;
        Ok(model)
    }

    pub fn predict(
        model: &Path,
        data: &Path,
        cate: Option<&Path>,
        out: &Path,
    ) -> Result<UpliftScores> {
        let model = GcnModel::from_json(&read_text(model)?)?;
        let ds = Dataset::read_csv(data)?;
        let weights = load_weights(cate, &ds)?;
        let scores = gcn::predict_uplift(&model, &ds, weights.as_ref())?;
        scores.write_csv(out)?;
        Ok(scores)
    }

    /// Writes the report JSON (with `echo` embedded as `config`) and the
    /// curve CSV.
    pub fn evaluate(
        pred: &Path,
        data: &Path,
        echo: Value,
        report_out: &Path,
        curve_out: Option<&Path>,
    ) -> Result<Value> {
        let ds = Dataset::read_csv(data)?;
        let scores = UpliftScores::read_csv(pred)?;
        if scores.tau_hat.len() != ds.n() {
            return Err(UpliftError::shape(
                format!("{} predictions", ds.n()),
                scores.tau_hat.len(),
            ));
        }
        let report = eval::evaluate(
            &scores.tau_hat,
            &scores.observed_prediction(&ds.t),
            &ds.t,
            &ds.y,
            ds.tau_true.as_deref(),
        )?;
        let mut value = serde_json::to_value(&report)?;
        value["config"] = echo;
        write_json(&value, report_out)?;
        if let Some(curve_out) = curve_out {
            report.curve.write_csv(curve_out)?;
        }
        Ok(value)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub rng: String,
    pub config: PipelineConfig,
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub artifacts: Vec<ArtifactRecord>,
    pub stage_wall_ms: BTreeMap<String, u128>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Removes the lock file when the run ends, successfully or not.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|_| {
                UpliftError::Config(format!(
                    "output directory {} is locked by another run (remove {} if stale)",
                    dir.display(),
                    path.display()
                ))
            })?;
        Ok(Self(path))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub output_dir: PathBuf,
    pub report: Value,
    pub report_plain: Option<Value>,
    pub manifest: RunManifest,
}

struct Recorder {
    dir: PathBuf,
    artifacts: Vec<String>,
    times: BTreeMap<String, u128>,
}

impl Recorder {
    fn path(&mut self, name: &str) -> PathBuf {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        self.dir.join(name)
    }

    fn stage<T>(
        &mut self,
        name: &str,
        failed: &mut Option<String>,
        f: impl FnOnce(&mut Self) -> Result<T>,
    ) -> Result<T> {
        let start = Instant::now();
        let out = f(self);
        self.times
            .insert(name.to_string(), start.elapsed().as_millis());
        if out.is_err() {
            *failed = Some(name.to_string());
        }
        out
    }
}

pub fn run_from_path(config_path: &Path) -> Result<PipelineOutcome> {
    run(&PipelineConfig::from_path(config_path)?)
}

pub fn run(config: &PipelineConfig) -> Result<PipelineOutcome> {
    let resolved = config.validate()?;
    fs::create_dir_all(&resolved.output_dir)?;
    let _lock = DirLock::acquire(&resolved.output_dir)?;
    let mut rec = Recorder {
        dir: resolved.output_dir.clone(),
        artifacts: Vec::new(),
        times: BTreeMap::new(),
    };
    let mut failed = None;
    let result = run_stages(&resolved, &mut rec, &mut failed);
    let manifest = write_manifest(&resolved, &rec, failed, result.as_ref().err())?;
    let (report, report_plain) = result?;
    Ok(PipelineOutcome {
        output_dir: resolved.output_dir,
        report,
        report_plain,
        manifest,
    })
}

fn run_stages(
    r: &ResolvedConfig,
    rec: &mut Recorder,
    failed: &mut Option<String>,
) -> Result<(Value, Option<Value>)> {
    let cfg = &r.config;
    let seed = r.seed;
    let data = rec.path("data.csv");
    rec.stage("dataset", failed, |rec| match &cfg.dataset {
        DatasetSource::Synthetic { n, d, sigma, eta } => {
            let syn = SyntheticConfig {
                n: *n,
                d: *d,
                sigma: *sigma,
                eta: *eta,
                seed,
            };
            stages::simulate(&syn, &data).map(drop)
        }
        DatasetSource::Csv {
            path,
            mapping,
            max_rows,
        } => {
            let report = rec.path("load_report.json");
            stages::ingest(path, mapping, *max_rows, &data, &report).map(drop)
        }
    })?;

    let train = rec.path("train.csv");
    let test = rec.path("test.csv");
    rec.stage("split", failed, |_| {
        stages::split(&data, cfg.train_frac, seed, &train, &test)
    })?;

    let teacher_path = rec.path("teacher.json");
    let soft = rec.path("soft_labels.csv");
    rec.stage("distill", failed, |_| {
        stages::distill(&train, &cfg.teacher, &teacher_path, &soft)
    })?;

    let cate_model = rec.path("cate.json");
    let weights = rec.path("weights.csv");
    let cate_summary = rec.path("cate_summary.json");
    rec.stage("cate", failed, |_| {
        stages::cate(&train, &soft, &r.dml, &cate_model, &weights, &cate_summary)
    })?;

    let dag = rec.path("dag.json");
    let edges = rec.path("dag.txt");
    let adjacency = rec.path("adjacency.csv");
    let full = cfg.structure.include_treatment_outcome.then(|| {
        rec.path("dag_full.txt");
        rec.path("dag_full.json")
    });
    rec.stage("structure", failed, |_| {
        stages::structure(
            &train,
            &r.structure,
            &stages::StructureOutputs {
                dag: &dag,
                edges: &edges,
                adjacency: &adjacency,
                full_dag: full.as_deref(),
            },
        )
        .map(drop)
    })?;

    let echo = serde_json::to_value(cfg)?;
    let mut run_variant = |name: &str, cate: Option<&Path>, rec: &mut Recorder| -> Result<Value> {
        let model = rec.path(&format!("gcn_{name}.json"));
        let preds = rec.path(&format!("predictions_{name}.csv"));
        let report_name = if name == "causal" {
            "report.json".to_string()
        } else {
            format!("report_{name}.json")
        };
        let report = rec.path(&report_name);
        let curve = rec.path(&format!("curve_{name}.csv"));
        rec.stage(&format!("train_{name}"), failed, |_| {
            stages::train(&train, &dag, cate, &r.gcn, &model).map(drop)
        })?;
        rec.stage(&format!("predict_{name}"), failed, |_| {
            stages::predict(&model, &test, cate, &preds).map(drop)
        })?;
        let mut variant_echo = echo.clone();
        variant_echo["variant"] = Value::from(name);
        rec.stage(&format!("evaluate_{name}"), failed, |_| {
            stages::evaluate(&preds, &test, variant_echo, &report, Some(&curve))
        })
    };
    let causal = run_variant("causal", Some(&cate_model), rec)?;
    let plain = if cfg.compare {
        Some(run_variant("plain", None, rec)?)
    } else {
        None
    };
    if let Some(plain) = &plain {
        let pick = |v: &Value| {
            serde_json::json!({
                "mse_y": v["mse_y"],
                "abs_ite": v["abs_ite"],
                "auuc_raw": v["auuc_raw"],
                "auuc_norm": v["auuc_norm"],
            })
        };
        let comparison = serde_json::json!({
            "causal_weighted": pick(&causal),
            "plain": pick(plain),
        });
        write_json(&comparison, &rec.path("comparison.json"))?;
    }
    Ok((causal, plain))
}

fn write_manifest(
    r: &ResolvedConfig,
    rec: &Recorder,
    failed: Option<String>,
    error: Option<&UpliftError>,
) -> Result<RunManifest> {
    let mut artifacts = Vec::new();
    for name in &rec.artifacts {
        let path = rec.dir.join(name);
        if path.exists() {
            artifacts.push(ArtifactRecord {
                path: name.clone(),
                sha256: sha256_file(&path)?,
                bytes: fs::metadata(&path)?.len(),
            });
        }
    }
    let manifest = RunManifest {
        tool: "uplift".into(),
        version: TOOL_VERSION.into(),
        rng: RNG_ALGORITHM.into(),
        config: r.config.clone(),
        status: if error.is_none() {
            "ok".into()
        } else {
            "failed".into()
        },
        failed_stage: failed,
        error: error.map(|e| e.to_string()),
        artifacts,
        stage_wall_ms: rec.times.clone(),
    };
    let tmp = rec.dir.join("manifest.json.tmp");
    write_json(&manifest, &tmp)?;
    fs::rename(&tmp, rec.dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(dir: &Path) -> PipelineConfig {
        serde_json::from_value(serde_json::json!({
            "seed": 3,
            "output_dir": dir,
            "dataset": {"synthetic": {"n": 240, "d": 5}},
            "teacher": {"n_rounds": 20},
            "gcn": {"epochs": 3, "hidden": 4, "readout_hidden": 4},
        }))
        .unwrap()
    }

    #[test]
    fn missing_seed_is_config_error_without_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        let mut cfg = small_config(&out);
        cfg.seed = None;
        let err = run(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(!out.exists());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let v =
            serde_json::json!({"seed": 1, "dataset": {"synthetic": {"n": 10, "d": 5}}, "bogus": 1});
        assert!(serde_json::from_value::<PipelineConfig>(v).is_err());
    }

    #[test]
    fn small_run_writes_every_artifact() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        let outcome = run(&small_config(&out)).unwrap();
        assert!(outcome.report["mse_y"].as_f64().unwrap().is_finite());
        assert!(outcome.report["abs_ite"].as_f64().unwrap().is_finite());
        assert!(outcome.report_plain.is_some());
        for a in &outcome.manifest.artifacts {
            assert!(out.join(&a.path).exists(), "{}", a.path);
        }
        assert!(out.join("manifest.json").exists());
        assert!(!out.join(".lock").exists());
        assert_eq!(outcome.manifest.status, "ok");
    }

    #[test]
    fn stale_lock_blocks_the_run() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("out");
        fs::create_dir_all(&out).unwrap();
        fs::write(out.join(".lock"), "").unwrap();
        assert!(matches!(
            run(&small_config(&out)),
            Err(UpliftError::Config(_))
        ));
    }
}
