use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use super::{fit, LearnerSpec};
use crate::data::FeatureTable;
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, par_map, rng};

/// Fold assignment for held-out prediction. Rows sharing a cluster always
/// share a fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossFitPlan {
    n_folds: usize,
    folds: Vec<usize>,
    seed: u64,
}

impl CrossFitPlan {
    /// Assign clusters (or single units when the table has no cluster ids)
    /// to folds: seeded shuffle, then largest-first into the lightest fold.
    pub fn new(table: &FeatureTable, n_folds: usize, seed: u64) -> Result<Self> {
        if n_folds < 2 {
            return Err(Error::Plan(format!("need at least 2 folds, got {n_folds}")));
        }
        let mut groups: Vec<Vec<usize>> = table.cluster_groups().into_iter().map(|(_, r)| r).collect();
        if groups.len() < n_folds {
            return Err(Error::Plan(format!("{} clusters cannot fill {n_folds} folds", groups.len())));
        }
        groups.shuffle(&mut rng(seed));
        groups.sort_by_key(|g| std::cmp::Reverse(g.len()));
        let mut load = vec![0usize; n_folds];
        let mut folds = vec![0; table.n_rows()];
        for g in groups {
            let k = (0..n_folds).min_by_key(|&k| (load[k], k)).unwrap_or(0);
            load[k] += g.len();
            for i in g {
                folds[i] = k;
            }
        }
        Ok(CrossFitPlan { n_folds, folds, seed })
    }

    /// Plan from an explicit assignment; every fold must be non-empty.
    pub fn from_assignment(folds: Vec<usize>, n_folds: usize, seed: u64) -> Result<Self> {
        if n_folds < 2 {
            return Err(Error::Plan(format!("need at least 2 folds, got {n_folds}")));
        }
        let mut count = vec![0usize; n_folds];
        for &f in &folds {
            if f >= n_folds {
                return Err(Error::Plan(format!("fold index {f} out of range")));
            }
            count[f] += 1;
        }
        if let Some(k) = count.iter().position(|&c| c == 0) {
            return Err(Error::Plan(format!("fold {k} is empty")));
        }
        Ok(CrossFitPlan { n_folds, folds, seed })
    }

    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn n_rows(&self) -> usize {
        self.folds.len()
    }

    pub fn fold_of(&self, row: usize) -> usize {
        self.folds[row]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rows_in(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == fold).collect()
    }

    pub fn rows_outside(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] != fold).collect()
    }
}

fn take_rows(x: &ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// Held-out predictions: entry `i` comes from a model trained on every
/// fold except the one containing row `i`.
pub fn cross_fit_predict(
    spec: &LearnerSpec,
    x: ArrayView2<f64>,
    y: &[f64],
    w: Option<&[f64]>,
    plan: &CrossFitPlan,
) -> Result<Vec<f64>> {
    if plan.n_rows() != x.nrows() || y.len() != x.nrows() {
        return Err(Error::Plan(format!("plan covers {} rows, data has {}", plan.n_rows(), x.nrows())));
    }
    let per_fold = par_map(plan.n_folds(), |k| -> Result<(Vec<usize>, Vec<f64>)> {
        let test = plan.rows_in(k);
        if test.is_empty() {
            return Err(Error::Plan(format!("fold {k} is empty")));
        }
        let train = plan.rows_outside(k);
        let xt = take_rows(&x, &train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let wt: Option<Vec<f64>> = w.map(|w| train.iter().map(|&i| w[i]).collect());
        let spec_k = spec.clone().with_seed(derive_seed(spec.seed, k as u64));
        let model = fit(&spec_k, xt.view(), &yt, wt.as_deref())?;
        let pred = model.predict(take_rows(&x, &test).view())?;
        Ok((test, pred))
    });
    let mut out = vec![f64::NAN; x.nrows()];
    for r in per_fold {
        let (rows, pred) = r?;
        for (i, p) in rows.into_iter().zip(pred) {
            out[i] = p;
        }
    }
    Ok(out)
}
