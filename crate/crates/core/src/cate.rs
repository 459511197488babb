//! Multi-head causal weights: one cross-fitted double machine learning head
//! per feature.
//!
//! Head `j` treats column `j` as a continuous treatment, the teacher's soft
//! label as the outcome and every other column as a control. Both are
//! residualized out-of-fold on the controls, then the final stage regresses
//! `Ỹ` on `θ(x) · T̃`:
//!
//! * constant: `θ̂ = Σ Ỹ T̃ / Σ T̃²`;
//! * linear: `θ(x) = a + bᵀ (x₋ⱼ − m)`, fit by the normal equations
//!   `Σ T̃² φ φᵀ β = Σ T̃ Ỹ φ` with `φ = [1, x₋ⱼ − m]` and a scale-free ridge
//!   `λ · G_kk` added to each slope's diagonal entry.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UpliftError};
use crate::linalg::{solve_spd, RidgeFit};
use crate::rng::SeededRng;
use crate::teacher::{fit_gbdt, GbdtParams, SoftLabels};

/// A head is degenerate when its out-of-fold treatment residual keeps less
/// than this fraction of the column's variation (or is below `ABS_SS_FLOOR`).
pub const DEGENERATE_FRACTION: f64 = 1e-4;
pub const ABS_SS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nuisance {
    Ridge,
    Gbdt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalStage {
    Constant,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DmlConfig {
    pub n_folds: usize,
    pub nuisance: Nuisance,
    pub ridge_lambda: f64,
    pub final_stage: FinalStage,
    pub seed: u64,
    /// Used when `nuisance` is `gbdt`.
    pub gbdt: GbdtParams,
}

impl Default for DmlConfig {
    fn default() -> Self {
        Self {
            n_folds: 2,
            nuisance: Nuisance::Ridge,
            ridge_lambda: 1e-3,
            final_stage: FinalStage::Linear,
            seed: 0,
            gbdt: GbdtParams::default(),
        }
    }
}

impl DmlConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.n_folds < 2 {
            return Err(UpliftError::Config(format!(
                "n_folds must be >= 2, got {}",
                self.n_folds
            )));
        }
        if self.n_folds > n {
            return Err(UpliftError::Config(format!(
                "n_folds ({}) exceeds the number of rows ({n})",
                self.n_folds
            )));
        }
        if self.ridge_lambda.is_nan() || self.ridge_lambda <= 0.0 {
            return Err(UpliftError::Config(format!(
                "ridge_lambda must be > 0, got {}",
                self.ridge_lambda
            )));
        }
        if self.nuisance == Nuisance::Gbdt {
            self.gbdt.validate()?;
        }
        Ok(())
    }

    /// Fold index of every row: a seeded permutation dealt round-robin.
    pub fn fold_assignment(&self, n: usize) -> Vec<usize> {
        let perm = SeededRng::new(self.seed).permutation(n);
        let mut fold = vec![0; n];
        for (k, &row) in perm.iter().enumerate() {
            fold[row] = k % self.n_folds;
        }
        fold
    }
}

/// Out-of-fold residuals `values − ĝ(controls)`, with `ĝ` refit on the
/// complement of each fold.
pub fn residualize(values: &[f64], controls: &DMatrix<f64>, cfg: &DmlConfig) -> Result<Vec<f64>> {
    let n = values.len();
    if controls.nrows() != n {
        return Err(UpliftError::shape(
            format!("{n} control rows"),
            controls.nrows(),
        ));
    }
    cfg.validate(n)?;
    let fold = cfg.fold_assignment(n);
    let mut residual = vec![0.0; n];
    for k in 0..cfg.n_folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != k).collect();
        let held: Vec<usize> = (0..n).filter(|&i| fold[i] == k).collect();
        let x_train = controls.select_rows(&train);
        let v_train: Vec<f64> = train.iter().map(|&i| values[i]).collect();
        let x_held = controls.select_rows(&held);
        let preds: Vec<f64> = match cfg.nuisance {
            Nuisance::Ridge => {
                let fit = RidgeFit::fit(&x_train, &v_train, cfg.ridge_lambda);
                (0..held.len())
                    .map(|r| fit.predict_row(&x_held, r))
                    .collect()
            }
            Nuisance::Gbdt => fit_gbdt(&x_train, &v_train, &cfg.gbdt)?.predict_raw(&x_held)?,
        };
        for (r, &i) in held.iter().enumerate() {
            residual[i] = values[i] - preds[r];
        }
    }
    Ok(residual)
}

/// Fitted effect function of one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ThetaFn {
    Constant {
        theta: f64,
    },
    /// `intercept + Σ_k coef[k] · (x[controls[k]] − means[k])`.
    Linear {
        intercept: f64,
        controls: Vec<usize>,
        coef: Vec<f64>,
        means: Vec<f64>,
    },
}

impl ThetaFn {
    pub fn eval(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        match self {
            ThetaFn::Constant { theta } => *theta,
            ThetaFn::Linear {
                intercept,
                controls,
                coef,
                means,
            } => {
                let mut acc = *intercept;
                for k in 0..controls.len() {
                    acc += coef[k] * (x[(row, controls[k])] - means[k]);
                }
                acc
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEffect {
    pub feature: usize,
    pub theta: ThetaFn,
    pub theta_per_sample: Vec<f64>,
    /// `Σ Ỹ T̃ / Σ T̃²`, reported in both final-stage modes.
    pub constant_theta: f64,
    pub degenerate: bool,
    pub treatment_residual: Vec<f64>,
    pub outcome_residual: Vec<f64>,
}

impl FeatureEffect {
    /// Uncentered correlation between the final-stage residual
    /// `Ỹ − θ̂ T̃` and `T̃`; zero at the constant-mode optimum.
    pub fn orthogonality(&self) -> f64 {
        let mut cross = 0.0;
        let mut ee = 0.0;
        let mut tt = 0.0;
        for ((&theta, &ty), &tr) in self
            .theta_per_sample
            .iter()
            .zip(&self.outcome_residual)
            .zip(&self.treatment_residual)
        {
            let e = ty - theta * tr;
            cross += e * tr;
            ee += e * e;
            tt += tr * tr;
        }
        if ee == 0.0 || tt == 0.0 {
            return 0.0;
        }
        cross / (ee.sqrt() * tt.sqrt())
    }
}

pub fn dml_fit_feature(
    j: usize,
    x: &DMatrix<f64>,
    y_soft: &SoftLabels,
    cfg: &DmlConfig,
) -> Result<FeatureEffect> {
    let (n, d) = x.shape();
    if d < 2 {
        return Err(UpliftError::Config(format!(
            "per-feature DML needs at least two features, got {d}"
        )));
    }
    if j >= d {
        return Err(UpliftError::shape(format!("feature index < {d}"), j));
    }
    if y_soft.y_hat.len() != n {
        return Err(UpliftError::shape(
            format!("{n} soft labels"),
            y_soft.y_hat.len(),
        ));
    }
    cfg.validate(n)?;
    let control_idx: Vec<usize> = (0..d).filter(|&k| k != j).collect();
    let controls = x.select_columns(&control_idx);
    let treatment: Vec<f64> = x.column(j).iter().copied().collect();
    let t_res = residualize(&treatment, &controls, cfg)?;
    let y_res = residualize(&y_soft.y_hat, &controls, cfg)?;

    let ss_t: f64 = t_res.iter().map(|v| v * v).sum();
    let t_mean = treatment.iter().sum::<f64>() / n as f64;
    let ss_total: f64 = treatment.iter().map(|v| (v - t_mean).powi(2)).sum();
    let degenerate = ss_t < ABS_SS_FLOOR || ss_t < DEGENERATE_FRACTION * ss_total;

    let constant_theta = if degenerate {
        0.0
    } else {
        t_res.iter().zip(&y_res).map(|(t, y)| t * y).sum::<f64>() / ss_t
    };
    let theta = if degenerate {
        ThetaFn::Constant { theta: 0.0 }
    } else {
        match cfg.final_stage {
            FinalStage::Constant => ThetaFn::Constant {
                theta: constant_theta,
            },
            FinalStage::Linear => {
                linear_final_stage(&controls, &control_idx, &t_res, &y_res, cfg.ridge_lambda)
            }
        }
    };
    let theta_per_sample = (0..n).map(|i| theta.eval(x, i)).collect();
    Ok(FeatureEffect {
        feature: j,
        theta,
        theta_per_sample,
        constant_theta,
        degenerate,
        treatment_residual: t_res,
        outcome_residual: y_res,
    })
}

fn linear_final_stage(
    controls: &DMatrix<f64>,
    control_idx: &[usize],
    t_res: &[f64],
    y_res: &[f64],
    lambda: f64,
) -> ThetaFn {
    let (n, p) = controls.shape();
    let means: Vec<f64> = controls.column_iter().map(|c| c.sum() / n as f64).collect();
    let q = p + 1;
    let mut gram = DMatrix::<f64>::zeros(q, q);
    let mut rhs = DVector::<f64>::zeros(q);
    let mut phi = vec![0.0; q];
    for i in 0..n {
        phi[0] = 1.0;
        for k in 0..p {
            phi[k + 1] = controls[(i, k)] - means[k];
        }
        let w = t_res[i] * t_res[i];
        let wy = t_res[i] * y_res[i];
        for a in 0..q {
            rhs[a] += wy * phi[a];
            for b in a..q {
                gram[(a, b)] += w * phi[a] * phi[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    for k in 1..q {
        let scale = if gram[(k, k)] > 0.0 {
            gram[(k, k)]
        } else {
            1.0
        };
        gram[(k, k)] += lambda * scale;
    }
    match solve_spd(&gram, &rhs) {
        Some(beta) => ThetaFn::Linear {
            intercept: beta[0],
            controls: control_idx.to_vec(),
            coef: beta.iter().skip(1).copied().collect(),
            means,
        },
        None => ThetaFn::Constant {
            theta: rhs[0] / gram[(0, 0)],
        },
    }
}

/// Per-sample causal weights, `w[(i, j)] = θ̂ⱼ(xᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalWeights {
    pub w: DMatrix<f64>,
    pub theta_mean: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub heterogeneity_basis: String,
}

impl CausalWeights {
    fn from_matrix(w: DMatrix<f64>, degenerate: Vec<bool>, basis: String) -> Self {
        let n = w.nrows() as f64;
        let theta_mean = w.column_iter().map(|c| c.sum() / n).collect();
        Self {
            w,
            theta_mean,
            degenerate,
            heterogeneity_basis: basis,
        }
    }

    pub fn write_csv(&self, feature_names: &[String], path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(feature_names)?;
        for i in 0..self.w.nrows() {
            wtr.write_record((0..self.w.ncols()).map(|j| self.w[(i, j)].to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Serializable fitted heads; scores new rows with the training effect
/// functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateModel {
    pub config: DmlConfig,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub heads: Vec<HeadSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSummary {
    pub feature: usize,
    pub theta: ThetaFn,
    pub constant_theta: f64,
    pub degenerate: bool,
    /// Training-row mean of the per-sample effect.
    pub theta_mean: f64,
}

impl CateModel {
    pub fn weights_for(&self, x: &DMatrix<f64>) -> Result<CausalWeights> {
        if x.ncols() != self.n_features {
            return Err(UpliftError::shape(
                format!("{} feature columns", self.n_features),
                x.ncols(),
            ));
        }
        let w = DMatrix::from_fn(x.nrows(), self.n_features, |i, j| {
            self.heads[j].theta.eval(x, i)
        });
        Ok(CausalWeights::from_matrix(
            w,
            self.heads.iter().map(|h| h.degenerate).collect(),
            basis_description(self.config.final_stage),
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn basis_description(stage: FinalStage) -> String {
    match stage {
        FinalStage::Constant => "constant".into(),
        FinalStage::Linear => "linear: [1, x_-j - mean]".into(),
    }
}

#[derive(Debug, Clone)]
pub struct CateFit {
    pub heads: Vec<FeatureEffect>,
    pub weights: CausalWeights,
}

impl CateFit {
    pub fn model(&self, feature_names: &[String], cfg: &DmlConfig) -> CateModel {
        CateModel {
            config: cfg.clone(),
            n_features: self.heads.len(),
            feature_names: feature_names.to_vec(),
            heads: self
                .heads
                .iter()
                .map(|h| HeadSummary {
                    feature: h.feature,
                    theta: h.theta.clone(),
                    constant_theta: h.constant_theta,
                    degenerate: h.degenerate,
                    theta_mean: self.weights.theta_mean[h.feature],
                })
                .collect(),
        }
    }
}

/// Runs every head; heads execute on the rayon pool and are merged by
/// feature index, so the result matches [`multi_head_cate_sequential`].
pub fn multi_head_cate(x: &DMatrix<f64>, y_soft: &SoftLabels, cfg: &DmlConfig) -> Result<CateFit> {
    let heads = (0..x.ncols())
        .into_par_iter()
        .map(|j| dml_fit_feature(j, x, y_soft, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(heads, x.nrows(), cfg))
}

pub fn multi_head_cate_sequential(
    x: &DMatrix<f64>,
    y_soft: &SoftLabels,
    cfg: &DmlConfig,
) -> Result<CateFit> {
    let heads = (0..x.ncols())
        .map(|j| dml_fit_feature(j, x, y_soft, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(heads, x.nrows(), cfg))
}

fn assemble(heads: Vec<FeatureEffect>, n: usize, cfg: &DmlConfig) -> CateFit {
    let w = DMatrix::from_fn(n, heads.len(), |i, j| heads[j].theta_per_sample[i]);
    let weights = CausalWeights::from_matrix(
        w,
        heads.iter().map(|h| h.degenerate).collect(),
        basis_description(cfg.final_stage),
    );
    CateFit { heads, weights }
}
