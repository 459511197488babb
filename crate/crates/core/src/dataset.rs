//! Tabular uplift data: the synthetic randomized-trial generator, CSV
//! ingestion for Criteo-style files, train/test splitting and CSV export.
//!
//! The synthetic generator draws, per row and in this order: `d` uniforms for
//! the features, one uniform for the treatment coin, then two uniforms for the
//! Box–Muller noise deviate (see [`crate::rng`]).

use std::f64::consts::PI;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UpliftError};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n × d`, column-major.
    pub x: DMatrix<f64>,
    pub t: Vec<u8>,
    pub y: Vec<f64>,
    /// Ground-truth individual effect; only the synthetic generator sets it.
    pub tau_true: Option<Vec<f64>>,
    pub feature_names: Vec<String>,
    pub seed: u64,
}

impl Dataset {
    pub fn new(
        x: DMatrix<f64>,
        t: Vec<u8>,
        y: Vec<f64>,
        tau_true: Option<Vec<f64>>,
        feature_names: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        let n = x.nrows();
        if n == 0 || x.ncols() == 0 {
            return Err(UpliftError::Data(format!(
                "dataset must have at least one row and one feature, got {}x{}",
                n,
                x.ncols()
            )));
        }
        if t.len() != n || y.len() != n {
            return Err(UpliftError::shape(
                format!("{n} treatments and outcomes"),
                format!("{} treatments, {} outcomes", t.len(), y.len()),
            ));
        }
        if let Some(tau) = &tau_true {
            if tau.len() != n {
                return Err(UpliftError::shape(format!("{n} true effects"), tau.len()));
            }
        }
        if feature_names.len() != x.ncols() {
            return Err(UpliftError::shape(
                format!("{} feature names", x.ncols()),
                feature_names.len(),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(UpliftError::Data(
                "non-finite value in features or outcome".into(),
            ));
        }
        if let Some(bad) = t.iter().position(|&v| v > 1) {
            return Err(UpliftError::DataRow {
                row: bad + 1,
                message: format!("treatment must be 0 or 1, got {}", t[bad]),
            });
        }
        Ok(Self {
            x,
            t,
            y,
            tau_true,
            feature_names,
            seed,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn group_sizes(&self) -> (usize, usize) {
        let treated = self.t.iter().filter(|&&v| v == 1).count();
        (treated, self.n() - treated)
    }

    pub fn is_synthetic(&self) -> bool {
        self.tau_true.is_some()
    }

    /// Features with the treatment indicator appended as the last column.
    pub fn x_with_treatment(&self) -> DMatrix<f64> {
        let n = self.n();
        let d = self.d();
        let mut out = self.x.clone().resize_horizontally(d + 1, 0.0);
        for i in 0..n {
            out[(i, d)] = f64::from(self.t[i]);
        }
        out
    }

    /// Features, treatment and outcome as one matrix (for full-variable
    /// structure learning).
    pub fn all_variables(&self) -> (DMatrix<f64>, Vec<String>) {
        let n = self.n();
        let d = self.d();
        let mut out = self.x.clone().resize_horizontally(d + 2, 0.0);
        for i in 0..n {
            out[(i, d)] = f64::from(self.t[i]);
            out[(i, d + 1)] = self.y[i];
        }
        let mut names = self.feature_names.clone();
        names.push("treatment".into());
        names.push("outcome".into());
        (out, names)
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let x = DMatrix::from_fn(rows.len(), self.d(), |i, j| self.x[(rows[i], j)]);
        Dataset {
            x,
            t: rows.iter().map(|&r| self.t[r]).collect(),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            tau_true: self
                .tau_true
                .as_ref()
                .map(|tau| rows.iter().map(|&r| tau[r]).collect()),
            feature_names: self.feature_names.clone(),
            seed: self.seed,
        }
    }

    /// Writes `<features...>,treatment,outcome[,tau_true]`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = self.feature_names.clone();
        header.push("treatment".into());
        header.push("outcome".into());
        if self.tau_true.is_some() {
            header.push("tau_true".into());
        }
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n() {
            record.clear();
            record.extend((0..self.d()).map(|j| self.x[(i, j)].to_string()));
            record.push(self.t[i].to_string());
            record.push(self.y[i].to_string());
            if let Some(tau) = &self.tau_true {
                record.push(tau[i].to_string());
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a file produced by [`Dataset::write_csv`]: every column other
    /// than `treatment`, `outcome` and `tau_true` is a feature.
    pub fn read_csv(path: &Path) -> Result<Dataset> {
        if !path.exists() {
            return Err(UpliftError::MissingArtifact(path.to_path_buf()));
        }
        let file = File::open(path)?;
        let mut reader = csv::Reader::from_reader(file);
        let header = reader.headers()?.clone();
        let features: Vec<String> = header
            .iter()
            .filter(|h| !matches!(*h, "treatment" | "outcome" | "tau_true"))
            .map(str::to_string)
            .collect();
        let mapping = ColumnMapping {
            features,
            treatment: "treatment".into(),
            outcome: "outcome".into(),
        };
        let has_tau = header.iter().any(|h| h == "tau_true");
        let (mut ds, report) = read_mapped(reader, &mapping, has_tau.then_some("tau_true"))?;
        if report.rows_dropped > 0 {
            return Err(UpliftError::Data(format!(
                "{} rows with non-finite values in {}",
                report.rows_dropped,
                path.display()
            )));
        }
        ds.seed = 0;
        Ok(ds)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    pub d: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_sigma() -> f64 {
    1.0
}

fn default_eta() -> f64 {
    0.1
}

impl SyntheticConfig {
    pub fn new(n: usize, d: usize, seed: u64) -> Self {
        Self {
            n,
            d,
            sigma: default_sigma(),
            eta: default_eta(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(UpliftError::Config("synthetic n must be at least 1".into()));
        }
        if self.d < 5 {
            return Err(UpliftError::Config(format!(
                "synthetic d must be at least 5 (baseline uses x4 and x5), got {}",
                self.d
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(UpliftError::Config(format!(
                "sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        if !(self.eta > 0.0 && self.eta < 0.5) {
            return Err(UpliftError::Config(format!(
                "eta must lie in (0, 0.5), got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// `max{eta, min(v, 1 - eta)}`.
pub fn trim(v: f64, eta: f64) -> f64 {
    eta.max(v.min(1.0 - eta))
}

/// Trimmed propensity `trim_eta(sin(pi x1 x2))`; `x` is the 0-indexed row.
pub fn propensity(x: &[f64], eta: f64) -> f64 {
    trim((PI * x[0] * x[1]).sin(), eta)
}

pub fn true_effect(x: &[f64]) -> f64 {
    (x[0] + x[1]) / 2.0
}

/// Friedman-style baseline `sin(pi x1 x2) + 2 (x1 - 0.5)^2 + x4 + 0.5 x5`.
pub fn baseline(x: &[f64]) -> f64 {
    (PI * x[0] * x[1]).sin() + 2.0 * (x[0] - 0.5).powi(2) + x[3] + 0.5 * x[4]
}

/// `b*(x) + (w - 0.5) tau*(x) + sigma eps`.
pub fn outcome(x: &[f64], w: u8, sigma: f64, eps: f64) -> f64 {
    baseline(x) + (f64::from(w) - 0.5) * true_effect(x) + sigma * eps
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (n, d) = (cfg.n, cfg.d);
    let mut rng = SeededRng::new(cfg.seed);
    let mut x = DMatrix::zeros(n, d);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    let mut row = vec![0.0; d];
    for i in 0..n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = rng.uniform();
            x[(i, j)] = *v;
        }
        let e = propensity(&row, cfg.eta);
        let w = u8::from(rng.bernoulli(e));
        let eps = rng.standard_normal();
        t.push(w);
        y.push(outcome(&row, w, cfg.sigma, eps));
        tau.push(true_effect(&row));
    }
    let names = (0..d).map(|j| format!("f{j}")).collect();
    Dataset::new(x, t, y, Some(tau), names, cfg.seed)
}

/// Which CSV columns play which role. Defaults follow the public Criteo
/// uplift file: features `f0..f11`, `treatment`, `conversion`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ColumnMapping {
    #[serde(default = "default_features")]
    pub features: Vec<String>,
    #[serde(default = "default_treatment")]
    pub treatment: String,
    #[serde(default = "default_outcome")]
    pub outcome: String,
}

fn default_features() -> Vec<String> {
    (0..12).map(|j| format!("f{j}")).collect()
}

fn default_treatment() -> String {
    "treatment".into()
}

fn default_outcome() -> String {
    "conversion".into()
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            features: default_features(),
            treatment: default_treatment(),
            outcome: default_outcome(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
}

/// Load a real-world CSV. Rows holding any non-finite mapped value are
/// dropped and counted; the true effect is never available.
pub fn load_csv(path: &Path, mapping: &ColumnMapping) -> Result<(Dataset, LoadReport)> {
    load_csv_limited(path, mapping, None)
}

/// Like [`load_csv`] but stops after `max_rows` data rows.
pub fn load_csv_limited(
    path: &Path,
    mapping: &ColumnMapping,
    max_rows: Option<usize>,
) -> Result<(Dataset, LoadReport)> {
    if !path.exists() {
        return Err(UpliftError::MissingArtifact(path.to_path_buf()));
    }
    let reader = csv::Reader::from_reader(File::open(path)?);
    read_mapped_limited(reader, mapping, None, max_rows)
}

fn read_mapped<R: std::io::Read>(
    reader: csv::Reader<R>,
    mapping: &ColumnMapping,
    tau_column: Option<&str>,
) -> Result<(Dataset, LoadReport)> {
    read_mapped_limited(reader, mapping, tau_column, None)
}

fn read_mapped_limited<R: std::io::Read>(
    mut reader: csv::Reader<R>,
    mapping: &ColumnMapping,
    tau_column: Option<&str>,
    max_rows: Option<usize>,
) -> Result<(Dataset, LoadReport)> {
    if mapping.features.is_empty() {
        return Err(UpliftError::Schema(
            "column mapping lists no features".into(),
        ));
    }
    let header = reader.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| UpliftError::Schema(format!("missing column `{name}`")))
    };
    let feature_idx = mapping
        .features
        .iter()
        .map(|f| find(f))
        .collect::<Result<Vec<_>>>()?;
    let treat_idx = find(&mapping.treatment)?;
    let out_idx = find(&mapping.outcome)?;
    let tau_idx = tau_column.map(find).transpose()?;

    let d = feature_idx.len();
    let mut values: Vec<f64> = Vec::new();
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut tau = Vec::new();
    let mut report = LoadReport {
        rows_read: 0,
        rows_dropped: 0,
    };
    let mut feat_row = vec![0.0; d];
    for (k, record) in reader.records().enumerate() {
        if max_rows.is_some_and(|m| report.rows_read >= m) {
            break;
        }
        let record = record?;
        let row = k + 1;
        report.rows_read += 1;
        let parse = |idx: usize| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| UpliftError::DataRow {
                row,
                message: format!(
                    "column `{}`: cannot parse `{raw}` as a number",
                    &header[idx]
                ),
            })
        };
        for (slot, &idx) in feat_row.iter_mut().zip(&feature_idx) {
            *slot = parse(idx)?;
        }
        let treat = parse(treat_idx)?;
        let outcome = parse(out_idx)?;
        let tau_v = tau_idx.map(parse).transpose()?;
        let finite = feat_row.iter().all(|v| v.is_finite())
            && treat.is_finite()
            && outcome.is_finite()
            && tau_v.is_none_or(f64::is_finite);
        if !finite {
            report.rows_dropped += 1;
            continue;
        }
        let w = if treat == 0.0 {
            0
        } else if treat == 1.0 {
            1
        } else {
            return Err(UpliftError::DataRow {
                row,
                message: format!(
                    "treatment column `{}` must be 0 or 1, got {treat}",
                    mapping.treatment
                ),
            });
        };
        values.extend_from_slice(&feat_row);
        t.push(w);
        y.push(outcome);
        if let Some(v) = tau_v {
            tau.push(v);
        }
    }
    let n = t.len();
    if n == 0 {
        return Err(UpliftError::Data("no usable rows".into()));
    }
    let x = DMatrix::from_row_slice(n, d, &values);
    let ds = Dataset::new(x, t, y, tau_idx.map(|_| tau), mapping.features.clone(), 0)?;
    Ok((ds, report))
}

pub fn write_load_report(report: &LoadReport, path: &Path) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, report)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Seeded shuffle followed by a cut at `round(n · train_frac)`.
pub fn split(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(UpliftError::Config(format!(
            "train_frac must lie in (0, 1), got {train_frac}"
        )));
    }
    let n = ds.n();
    let n_train = (n as f64 * train_frac).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(UpliftError::Config(format!(
            "split of {n} rows at {train_frac} leaves an empty side"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let perm = rng.permutation(n);
    Ok((ds.subset(&perm[..n_train]), ds.subset(&perm[n_train..])))
}
