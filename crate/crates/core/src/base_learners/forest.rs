use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{Columns, GrowParams, RegressionTree};
use super::{map_rows, Prepared};
use crate::seeding::{derive_seed, par_map, rng};

#[derive(Debug, Clone, Copy)]
pub(crate) struct ForestParams {
    pub n_trees: usize,
    pub mtry: usize,
    pub min_leaf: usize,
    pub honest: bool,
    pub bootstrap: bool,
}

/// Bagged regression trees with per-split feature subsampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
}

impl RandomForest {
    pub(crate) fn fit(x: &ArrayView2<f64>, y: &[f64], prep: &Prepared, params: ForestParams, seed: u64) -> Self {
        let cols = Columns::from_view(x);
        let grow = GrowParams { max_depth: usize::MAX, min_leaf: params.min_leaf, mtry: Some(params.mtry) };
        let trees = par_map(params.n_trees, |t| {
            let mut r = rng(derive_seed(seed, t as u64));
            let n = prep.rows.len();
            let mut sample: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| prep.rows[r.random_range(0..n)]).collect()
            } else {
                prep.rows.clone()
            };
            if params.honest && sample.len() >= 2 {
                sample.shuffle(&mut r);
                let estimation = sample.split_off(sample.len() / 2);
                let mut tree = RegressionTree::grow(&cols, y, &prep.w, sample, grow, Some(&mut r));
                tree.reestimate_leaves(&cols, y, &prep.w, &estimation);
                tree
            } else {
                RegressionTree::grow(&cols, y, &prep.w, sample, grow, Some(&mut r))
            }
        });
        RandomForest { trees }
    }

    pub(crate) fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let k = self.trees.len() as f64;
        map_rows(x, |row| self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / k)
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}
