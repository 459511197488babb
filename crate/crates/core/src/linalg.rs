//! Small dense solves shared by the ridge nuisance, the linear final stage and
//! the BIC scorer.

use nalgebra::{DMatrix, DVector};

/// Solve `a · x = b` for symmetric positive definite `a`.
///
/// Returns `None` when the Cholesky factorization fails or a pivot is tiny
/// relative to the largest diagonal entry (numerically singular system).
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let max_diag = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let chol = a.clone().cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..a.nrows())
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if a.nrows() > 0 && min_pivot <= 1e-12 * max_diag.max(f64::MIN_POSITIVE) {
        return None;
    }
    Some(chol.solve(b))
}

/// Ridge regression with an unpenalized intercept.
///
/// The penalty is scale free: column `k` is penalized by
/// `lambda · Σ_i (x_ik − x̄_k)²`, which is plain ridge on standardized
/// columns. Constant columns get a unit penalty so the system stays definite.
#[derive(Debug, Clone)]
pub(crate) struct RidgeFit {
    pub intercept: f64,
    pub coef: DVector<f64>,
    pub means: DVector<f64>,
}

impl RidgeFit {
    pub fn fit(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> RidgeFit {
        let n = x.nrows();
        let p = x.ncols();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let means = DVector::from_iterator(p, x.column_iter().map(|c| c.sum() / n as f64));
        if p == 0 {
            return RidgeFit {
                intercept: y_mean,
                coef: DVector::zeros(0),
                means,
            };
        }
        let mut xc = x.clone();
        for (k, mut col) in xc.column_iter_mut().enumerate() {
            col.add_scalar_mut(-means[k]);
        }
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let mut gram = xc.transpose() * &xc;
        for k in 0..p {
            let scale = if gram[(k, k)] > 0.0 {
                gram[(k, k)]
            } else {
                1.0
            };
            gram[(k, k)] += lambda * scale;
        }
        let rhs = xc.transpose() * yc;
        let coef = solve_spd(&gram, &rhs)
            .or_else(|| gram.clone().lu().solve(&rhs))
            .unwrap_or_else(|| DVector::zeros(p));
        RidgeFit {
            intercept: y_mean,
            coef,
            means,
        }
    }

    pub fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut acc = self.intercept;
        for k in 0..self.coef.len() {
            acc += self.coef[k] * (x[(row, k)] - self.means[k]);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_solve_matches_direct() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = solve_spd(&a, &b).unwrap();
        let r = &a * &x - &b;
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn singular_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(solve_spd(&a, &b).is_none());
    }

    #[test]
    fn ridge_recovers_exact_line_with_tiny_penalty() {
        let x = DMatrix::from_fn(50, 1, |i, _| i as f64 / 10.0);
        let y: Vec<f64> = (0..50).map(|i| 3.0 + 2.0 * i as f64 / 10.0).collect();
        let fit = RidgeFit::fit(&x, &y, 1e-12);
        assert!((fit.coef[0] - 2.0).abs() < 1e-8);
        assert!((fit.predict_row(&x, 7) - y[7]).abs() < 1e-8);
    }
}
