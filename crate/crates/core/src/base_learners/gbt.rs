use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::tree::{Columns, GrowParams, RegressionTree};
use super::{map_rows, Prepared};

/// Squared-error gradient boosting: each round fits a shallow tree to the
/// current residuals and adds it scaled by the learning rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoostedTrees {
    base: f64,
    learning_rate: f64,
    trees: Vec<RegressionTree>,
}

impl BoostedTrees {
    pub(crate) fn fit(
        x: &ArrayView2<f64>,
        y: &[f64],
        prep: &Prepared,
        n_rounds: usize,
        learning_rate: f64,
        max_depth: usize,
        min_leaf: usize,
    ) -> Self {
        let cols = Columns::from_view(x);
        let sw: f64 = prep.rows.iter().map(|&i| prep.w[i]).sum();
        let base = prep.rows.iter().map(|&i| prep.w[i] * y[i]).sum::<f64>() / sw;
        let mut current = vec![base; y.len()];
        let mut residual = vec![0.0; y.len()];
        let mut trees = Vec::with_capacity(n_rounds);
        let params = GrowParams { max_depth, min_leaf, mtry: None };
        let mut row = vec![0.0; cols.n_cols()];
        for _ in 0..n_rounds {
            for &i in &prep.rows {
                residual[i] = y[i] - current[i];
            }
            let tree = RegressionTree::grow(&cols, &residual, &prep.w, prep.rows.clone(), params, None);
            for &i in &prep.rows {
                for (j, r) in row.iter_mut().enumerate() {
                    *r = cols.get(i, j);
                }
                current[i] += learning_rate * tree.predict_row(&row);
            }
            trees.push(tree);
        }
        BoostedTrees { base, learning_rate, trees }
    }

    pub(crate) fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        map_rows(x, |row| {
            self.trees.iter().fold(self.base, |acc, t| acc + self.learning_rate * t.predict_row(row))
        })
    }
}
