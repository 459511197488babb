//! Evaluation: outcome MSE, absolute ITE error, uplift curves and AUUC.
//!
//! The uplift curve sorts rows by descending score (ties keep row order) and
//! at every prefix `k` reports
//! `V(k) = Σ_{top-k, t=1} y / |T|  −  Σ_{top-k, t=0} y / |C|`
//! where `|T|` and `|C|` are the full-data group sizes, so `V(n)` is the
//! difference in group means. AUUC is `Σ_k V(k)`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UpliftError};

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(UpliftError::shape(format!("{what}: {a} values"), b));
    }
    if a == 0 {
        return Err(UpliftError::Data(format!("{what}: empty input")));
    }
    Ok(())
}

pub fn mse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths(y_true.len(), y_pred.len(), "mse")?;
    Ok(y_true
        .iter()
        .zip(y_pred)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / y_true.len() as f64)
}

/// Mean `|tau_true − tau_hat|`. Real-world data carries no true effect, which
/// is reported as an error rather than NaN.
pub fn abs_ite_error(tau_true: Option<&[f64]>, tau_hat: &[f64]) -> Result<f64> {
    let tau_true = tau_true.ok_or_else(|| {
        UpliftError::Data(
            "absolute ITE error needs the true effect; this is a real-world dataset without tau_true".into(),
        )
    })?;
    check_lengths(tau_true.len(), tau_hat.len(), "abs_ite_error")?;
    Ok(tau_true
        .iter()
        .zip(tau_hat)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / tau_true.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpliftCurve {
    /// `(k, V(k))` for `k = 1..=n`.
    pub points: Vec<(usize, f64)>,
    pub n_treated: usize,
    pub n_control: usize,
}

impl UpliftCurve {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `V(n)`: treated mean minus control mean.
    pub fn final_value(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "V"])?;
        for (k, v) in &self.points {
            w.write_record([k.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Row order by descending score, ties broken by ascending row index.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

pub fn uplift_curve(scores: &[f64], t: &[u8], y: &[f64]) -> Result<UpliftCurve> {
    check_lengths(scores.len(), t.len(), "uplift_curve treatment")?;
    check_lengths(scores.len(), y.len(), "uplift_curve outcome")?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(UpliftError::Data("uplift scores must be finite".into()));
    }
    let n_treated = t.iter().filter(|&&v| v == 1).count();
    let n_control = t.len() - n_treated;
    if n_treated == 0 || n_control == 0 {
        return Err(UpliftError::Data(format!(
            "uplift curve needs both groups, got {n_treated} treated and {n_control} control"
        )));
    }
    let mut sum_t = 0.0;
    let mut sum_c = 0.0;
    let points = rank_order(scores)
        .into_iter()
        .enumerate()
        .map(|(k, i)| {
            if t[i] == 1 {
                sum_t += y[i];
            } else {
                sum_c += y[i];
            }
            (k + 1, sum_t / n_treated as f64 - sum_c / n_control as f64)
        })
        .collect();
    Ok(UpliftCurve {
        points,
        n_treated,
        n_control,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuucMode {
    Raw,
    Normalized,
}

pub fn auuc_raw(curve: &UpliftCurve) -> f64 {
    curve.points.iter().map(|p| p.1).sum()
}

/// Expected raw AUUC of a uniformly random ordering: `Σ_k (k/n) · V(n)`.
pub fn auuc_random(curve: &UpliftCurve) -> f64 {
    let n = curve.len() as f64;
    curve.final_value() * (n + 1.0) / 2.0
}

/// Calibrated AUUC: 0.5 for the random-ordering expectation, 1.0 for the
/// reference ("perfect") ordering's curve.
pub fn auuc_normalized(curve: &UpliftCurve, perfect: &UpliftCurve) -> f64 {
    let random = auuc_random(curve);
    let span = (auuc_raw(perfect) - random).abs().max(1e-12);
    0.5 + (auuc_raw(curve) - random) / (2.0 * span)
}

/// Scores that define the reference ordering for normalization: the true
/// effect when known, otherwise `y·t − y·(1−t)`.
pub fn perfect_scores(t: &[u8], y: &[f64], tau_true: Option<&[f64]>) -> Vec<f64> {
    match tau_true {
        Some(tau) => tau.to_vec(),
        None => t
            .iter()
            .zip(y)
            .map(|(&w, &v)| if w == 1 { v } else { -v })
            .collect(),
    }
}

pub fn auuc(
    scores: &[f64],
    t: &[u8],
    y: &[f64],
    tau_true: Option<&[f64]>,
    mode: AuucMode,
) -> Result<f64> {
    let curve = uplift_curve(scores, t, y)?;
    Ok(match mode {
        AuucMode::Raw => auuc_raw(&curve),
        AuucMode::Normalized => {
            let perfect = uplift_curve(&perfect_scores(t, y, tau_true), t, y)?;
            auuc_normalized(&curve, &perfect)
        }
    })
}

/// Area under the ROC curve via the rank-sum statistic; tied scores count
/// one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len(), "roc_auc")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(UpliftError::Data("roc_auc needs both classes".into()));
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpliftReport {
    pub mse_y: f64,
    pub abs_ite: Option<f64>,
    pub auuc_raw: f64,
    pub auuc_norm: f64,
    /// Explains the normalized scale, which is defined by this crate.
    pub auuc_norm_definition: String,
    pub group_sizes: (usize, usize),
    #[serde(skip)]
    pub curve: UpliftCurve,
}

pub const AUUC_NORM_DEFINITION: &str =
    "0.5 + (raw - random) / (2 |perfect - random|); random = expected raw AUUC of a random ordering, \
     perfect = raw AUUC when ordering by tau_true (or by y*t - y*(1-t) without tau_true)";

/// Builds the metric bundle for one model on one dataset. `y_pred` is the
/// model's prediction of the observed outcome; `scores` rank rows for AUUC.
pub fn evaluate(
    scores: &[f64],
    y_pred: &[f64],
    t: &[u8],
    y: &[f64],
    tau_true: Option<&[f64]>,
) -> Result<UpliftReport> {
    let mse_y = mse(y, y_pred)?;
    let abs_ite = tau_true
        .map(|tau| abs_ite_error(Some(tau), scores))
        .transpose()?;
    let curve = uplift_curve(scores, t, y)?;
    let perfect = uplift_curve(&perfect_scores(t, y, tau_true), t, y)?;
    Ok(UpliftReport {
        mse_y,
        abs_ite,
        auuc_raw: auuc_raw(&curve),
        auuc_norm: auuc_normalized(&curve, &perfect),
        auuc_norm_definition: AUUC_NORM_DEFINITION.to_string(),
        group_sizes: (curve.n_treated, curve.n_control),
        curve,
    })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert!(mse(&[0.0], &[1.0, 2.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn abs_ite_examples() {
        let tau = [0.5, 0.5];
        assert_eq!(abs_ite_error(Some(&tau), &tau).unwrap(), 0.0);
        assert_eq!(abs_ite_error(Some(&tau), &[0.0, 1.0]).unwrap(), 0.5);
        let err = abs_ite_error(None, &[0.0]).unwrap_err();
        assert!(err.to_string().contains("real-world"));
    }

    #[test]
    fn four_row_curve_by_hand() {
        let scores = [0.9, 0.8, 0.7, 0.6];
        let t = [1, 0, 1, 0];
        let y = [1.0, 0.0, 0.0, 1.0];
        let curve = uplift_curve(&scores, &t, &y).unwrap();
        let v: Vec<f64> = curve.points.iter().map(|p| p.1).collect();
        assert_eq!(v, vec![0.5, 0.5, 0.5, 0.0]);
        assert_eq!(auuc_raw(&curve), 1.5);
    }

    #[test]
    fn zero_outcomes_give_flat_curve() {
        let curve = uplift_curve(&[0.3, 0.1, 0.2], &[1, 0, 1], &[0.0; 3]).unwrap();
        assert!(curve.points.iter().all(|p| p.1 == 0.0));
        assert_eq!(auuc_raw(&curve), 0.0);
    }

    #[test]
    fn ties_keep_row_order() {
        assert_eq!(rank_order(&[1.0, 1.0, 1.0, 1.0]), vec![0, 1, 2, 3]);
        assert_eq!(rank_order(&[0.0, 2.0, 2.0, 1.0]), vec![1, 2, 3, 0]);
    }

    #[test]
    fn empty_group_is_an_error() {
        assert!(uplift_curve(&[0.1, 0.2], &[1, 1], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn roc_auc_matches_pair_counting() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.4, 0.9];
        let labels = [false, true, false, true, false, true];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        assert!((roc_auc(&scores, &labels).unwrap() - wins / pairs).abs() < 1e-15);
    }

    #[test]
    fn normalized_hits_calibration_points() {
        let t = [1, 0, 1, 0, 1, 0];
        let y = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let tau = [0.9, 0.2, 0.1, -0.5, 0.6, 0.3];
        let perfect = auuc(&tau, &t, &y, Some(&tau), AuucMode::Normalized).unwrap();
        assert!((perfect - 1.0).abs() < 1e-12 || (perfect - 0.0).abs() < 1e-12);
    }
}
