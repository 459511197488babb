//! Knowledge-distillation teacher: a least-squares gradient boosted tree
//! regressor fit on `[X, t] -> y`, whose predictions replace the hard
//! outcome as the target of the causal-weight stage.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UpliftError};

/// Lower/upper clamp applied to soft labels when the training target is 0/1.
pub const SOFT_LABEL_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtParams {
    pub max_depth: usize,
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// Split thresholds examined per feature per node.
    pub max_candidates: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            max_depth: 3,
            n_rounds: 100,
            learning_rate: 0.1,
            min_samples_leaf: 8,
            max_candidates: 64,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0
            || self.n_rounds == 0
            || self.min_samples_leaf == 0
            || self.max_candidates == 0
        {
            return Err(UpliftError::Config(
                "gbdt max_depth, n_rounds, min_samples_leaf and max_candidates must be positive"
                    .into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(UpliftError::Config(format!(
                "gbdt learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Flat node arena; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[(row, feature)] <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    fn is_stump_leaf(&self) -> bool {
        self.nodes.len() == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub base_score: f64,
    pub max_depth: usize,
    pub n_rounds: usize,
    pub n_features: usize,
    /// Set when every training target was 0 or 1; enables soft-label clamping.
    pub binary_target: bool,
    /// Training MSE after the base score and after each boosting round.
    pub train_loss: Vec<f64>,
}

impl GbdtModel {
    pub fn predict_raw(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(UpliftError::shape(
                format!("{} columns", self.n_features),
                format!("{} columns", x.ncols()),
            ));
        }
        Ok((0..x.nrows())
            .map(|i| {
                self.base_score
                    + self.learning_rate
                        * self.trees.iter().map(|t| t.predict_row(x, i)).sum::<f64>()
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabels {
    pub y_hat: Vec<f64>,
}

fn mse_against(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, t)| (t - p).powi(2))
        .sum::<f64>()
        / target.len() as f64
}

pub fn fit_gbdt(x_aug: &DMatrix<f64>, target: &[f64], params: &GbdtParams) -> Result<GbdtModel> {
    params.validate()?;
    let n = x_aug.nrows();
    if n == 0 || target.len() != n {
        return Err(UpliftError::shape(
            format!("{n} targets (n >= 1)"),
            target.len(),
        ));
    }
    if target.iter().any(|v| !v.is_finite()) {
        return Err(UpliftError::Data("non-finite teacher target".into()));
    }
    let base_score = target.iter().sum::<f64>() / n as f64;
    let binary_target = target.iter().all(|&v| v == 0.0 || v == 1.0);
    let mut pred = vec![base_score; n];
    let mut model = GbdtModel {
        trees: Vec::new(),
        learning_rate: params.learning_rate,
        base_score,
        max_depth: params.max_depth,
        n_rounds: params.n_rounds,
        n_features: x_aug.ncols(),
        binary_target,
        train_loss: vec![mse_against(&pred, target)],
    };
    let scale = target.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let mut residual = vec![0.0; n];
    let all_rows: Vec<usize> = (0..n).collect();
    for _ in 0..params.n_rounds {
        for i in 0..n {
            residual[i] = target[i] - pred[i];
        }
        if residual.iter().all(|r| r.abs() <= 1e-15 * scale) {
            break;
        }
        let mut builder = TreeBuilder {
            x: x_aug,
            residual: &residual,
            params,
            nodes: Vec::new(),
        };
        builder.grow(&all_rows, 0);
        let tree = Tree {
            nodes: builder.nodes,
        };
        if tree.is_stump_leaf() {
            break;
        }
        for (i, p) in pred.iter_mut().enumerate() {
            *p += params.learning_rate * tree.predict_row(x_aug, i);
        }
        model.trees.push(tree);
        model.train_loss.push(mse_against(&pred, target));
    }
    Ok(model)
}

pub fn predict_soft(model: &GbdtModel, x_aug: &DMatrix<f64>) -> Result<SoftLabels> {
    let raw = model.predict_raw(x_aug)?;
    let y_hat = if model.binary_target {
        raw.into_iter()
            .map(|v| v.clamp(SOFT_LABEL_EPS, 1.0 - SOFT_LABEL_EPS))
            .collect()
    } else {
        raw
    };
    if y_hat.iter().any(|v: &f64| !v.is_finite()) {
        return Err(UpliftError::Numeric(
            "teacher produced a non-finite prediction".into(),
        ));
    }
    Ok(SoftLabels { y_hat })
}

struct TreeBuilder<'a> {
    x: &'a DMatrix<f64>,
    residual: &'a [f64],
    params: &'a GbdtParams,
    nodes: Vec<Node>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let mean = rows.iter().map(|&i| self.residual[i]).sum::<f64>() / rows.len() as f64;
        self.nodes.push(Node::Leaf { value: mean });
        if depth >= self.params.max_depth || rows.len() < 2 * self.params.min_samples_leaf {
            return id;
        }
        let Some(best) = self.best_split(rows) else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x[(i, best.feature)] <= best.threshold);
        let left = self.grow(&left_rows, depth + 1);
        let right = self.grow(&right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    /// Highest variance reduction; ties resolve to the lowest feature index,
    /// then the lowest threshold.
    fn best_split(&self, rows: &[usize]) -> Option<SplitChoice> {
        let n = rows.len();
        let min_leaf = self.params.min_samples_leaf;
        let total: f64 = rows.iter().map(|&i| self.residual[i]).sum();
        let parent = total * total / n as f64;
        let mut best: Option<SplitChoice> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
        for feature in 0..self.x.ncols() {
            pairs.clear();
            pairs.extend(
                rows.iter()
                    .map(|&i| (self.x[(i, feature)], self.residual[i])),
            );
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            // (value, count up to and including value, residual sum up to value)
            let mut uniques: Vec<(f64, usize, f64)> = Vec::new();
            let mut running = 0.0;
            for (k, &(v, r)) in pairs.iter().enumerate() {
                running += r;
                match uniques.last_mut() {
                    Some(last) if last.0 == v => {
                        last.1 = k + 1;
                        last.2 = running;
                    }
                    _ => uniques.push((v, k + 1, running)),
                }
            }
            if uniques.len() < 2 {
                continue;
            }
            for u in candidate_positions(uniques.len() - 1, self.params.max_candidates) {
                let (lo, n_left, s_left) = uniques[u];
                let n_right = n - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let s_right = total - s_left;
                let gain =
                    s_left * s_left / n_left as f64 + s_right * s_right / n_right as f64 - parent;
                let threshold = 0.5 * (lo + uniques[u + 1].0);
                let better = match &best {
                    None => gain > 0.0,
                    Some(b) => gain.partial_cmp(&b.gain) == Some(Ordering::Greater),
                };
                if better {
                    best = Some(SplitChoice {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best.filter(|b| b.gain > 1e-14 * parent.abs().max(1e-300))
    }
}

/// Indices into the `gaps` midpoints to examine: all of them, or `cap`
/// evenly spaced quantile positions in increasing order.
fn candidate_positions(gaps: usize, cap: usize) -> Vec<usize> {
    if gaps <= cap {
        return (0..gaps).collect();
    }
    let mut out: Vec<usize> = (0..cap)
        .map(|k| (((k as f64 + 0.5) * gaps as f64) / cap as f64) as usize)
        .map(|p| p.min(gaps - 1))
        .collect();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn uniform_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = SeededRng::new(seed);
        DMatrix::from_fn(n, d, |_, _| rng.uniform())
    }

    #[test]
    fn constant_target_has_no_trees() {
        let x = uniform_matrix(50, 3, 1);
        let model = fit_gbdt(&x, &vec![3.0; 50], &GbdtParams::default()).unwrap();
        assert!(model.trees.is_empty());
        assert!(model.predict_raw(&x).unwrap().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn single_row_is_base_score() {
        let x = DMatrix::from_row_slice(1, 2, &[0.3, 0.7]);
        let model = fit_gbdt(&x, &[4.5], &GbdtParams::default()).unwrap();
        assert_eq!(model.base_score, 4.5);
        assert!(model.trees.is_empty());
    }

    #[test]
    fn learns_identity_feature() {
        let x = uniform_matrix(500, 2, 7);
        let target: Vec<f64> = (0..500).map(|i| x[(i, 0)]).collect();
        let model = fit_gbdt(&x, &target, &GbdtParams::default()).unwrap();
        let pred = model.predict_raw(&x).unwrap();
        let mse = mse_against(&pred, &target);
        assert!(mse < 0.01, "training mse {mse}");
        assert!(model.trees.len() <= 100);
    }

    #[test]
    fn loss_trace_never_increases() {
        let x = uniform_matrix(300, 3, 2);
        let mut rng = SeededRng::new(5);
        let target: Vec<f64> = (0..300)
            .map(|i| (x[(i, 0)] * 6.0).sin() + x[(i, 1)] * x[(i, 2)] + 0.1 * rng.standard_normal())
            .collect();
        let model = fit_gbdt(&x, &target, &GbdtParams::default()).unwrap();
        for w in model.train_loss.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn binary_target_is_clamped() {
        let model = GbdtModel {
            trees: vec![Tree {
                nodes: vec![Node::Leaf { value: 3.0 }],
            }],
            learning_rate: 0.1,
            base_score: 1.0,
            max_depth: 3,
            n_rounds: 1,
            n_features: 1,
            binary_target: true,
            train_loss: vec![],
        };
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        assert_eq!(model.predict_raw(&x).unwrap()[0], 1.3);
        let soft = predict_soft(&model, &x).unwrap();
        assert_eq!(soft.y_hat[0], 1.0 - 1e-6);
    }

    #[test]
    fn base_only_model_predicts_base() {
        let x = uniform_matrix(10, 2, 1);
        let model = fit_gbdt(&x, &[0.25; 10], &GbdtParams::default()).unwrap();
        let soft = predict_soft(&model, &x).unwrap();
        assert!(soft.y_hat.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn column_mismatch_is_shape_error() {
        let x = uniform_matrix(40, 3, 1);
        let target: Vec<f64> = (0..40).map(|i| x[(i, 1)]).collect();
        let model = fit_gbdt(&x, &target, &GbdtParams::default()).unwrap();
        let wrong = uniform_matrix(4, 2, 1);
        assert!(matches!(
            predict_soft(&model, &wrong),
            Err(UpliftError::Shape { .. })
        ));
    }

    #[test]
    fn prediction_is_pure() {
        let x = uniform_matrix(200, 3, 4);
        let target: Vec<f64> = (0..200).map(|i| x[(i, 2)] * 2.0).collect();
        let model = fit_gbdt(&x, &target, &GbdtParams::default()).unwrap();
        let a = predict_soft(&model, &x).unwrap();
        let b = predict_soft(&model, &x).unwrap();
        assert_eq!(a, b);
        let again = fit_gbdt(&x, &target, &GbdtParams::default()).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let x = uniform_matrix(120, 2, 9);
        let target: Vec<f64> = (0..120).map(|i| (x[(i, 0)] * 3.3).exp()).collect();
        let model = fit_gbdt(&x, &target, &GbdtParams::default()).unwrap();
        let back = GbdtModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn quantile_candidates_are_capped_and_sorted() {
        let c = candidate_positions(1000, 64);
        assert_eq!(c.len(), 64);
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(candidate_positions(5, 64), vec![0, 1, 2, 3, 4]);
    }
}
