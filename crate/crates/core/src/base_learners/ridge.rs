use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{column_scaling, Prepared};
use crate::error::{Error, Result};

/// Weighted ridge regression on standardised columns with an unpenalised
/// intercept. Constant columns and exact duplicates of an earlier
/// standardised column are dropped before solving.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ridge {
    kept: Vec<usize>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    coef: Vec<f64>,
    intercept: f64,
}

impl Ridge {
    pub(crate) fn fit(x: &ArrayView2<f64>, y: &[f64], prep: &Prepared, lambda: f64) -> Result<Self> {
        let (mean, scale) = column_scaling(x, &prep.rows);
        let n = prep.rows.len();
        let std_col = |j: usize| -> Vec<f64> { prep.rows.iter().map(|&i| (x[[i, j]] - mean[j]) / scale[j]).collect() };

        let mut kept = Vec::new();
        let mut kept_cols: Vec<Vec<f64>> = Vec::new();
        for j in 0..x.ncols() {
            let c = std_col(j);
            if c.iter().all(|v| *v == c[0]) {
                continue;
            }
            if kept_cols.iter().any(|k| k == &c) {
                continue;
            }
            kept.push(j);
            kept_cols.push(c);
        }

        let w: Vec<f64> = prep.rows.iter().map(|&i| prep.w[i]).collect();
        let yy: Vec<f64> = prep.rows.iter().map(|&i| y[i]).collect();
        let sw: f64 = w.iter().sum();
        let y_bar = w.iter().zip(&yy).map(|(a, b)| a * b).sum::<f64>() / sw;
        if kept.is_empty() {
            return Ok(Ridge { kept, mean, scale, coef: Vec::new(), intercept: y_bar });
        }

        let p = kept.len();
        let col_bar: Vec<f64> =
            kept_cols.iter().map(|c| c.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw).collect();
        let design = DMatrix::from_fn(n, p, |i, k| (kept_cols[k][i] - col_bar[k]) * w[i].sqrt());
        let target = DVector::from_fn(n, |i, _| (yy[i] - y_bar) * w[i].sqrt());
        let mut gram = design.transpose() * &design;
        for k in 0..p {
            gram[(k, k)] += lambda;
        }
        let rhs = design.transpose() * target;
        let beta = gram
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Fit(format!("ridge solve failed: {e}")))?;
        let coef: Vec<f64> = beta.iter().copied().collect();
        let intercept = y_bar - coef.iter().zip(&col_bar).map(|(b, m)| b * m).sum::<f64>();
        Ok(Ridge { kept, mean, scale, coef, intercept })
    }

    pub(crate) fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .kept
                .iter()
                .zip(&self.coef)
                .map(|(&j, b)| b * (row[j] - self.mean[j]) / self.scale[j])
                .sum::<f64>()
    }
}
