//! Interchangeable weighted regression learners consumed by every
//! meta-learner: regression tree, random forest, gradient-boosted trees,
//! k-nearest-neighbours and ridge regression.

mod crossfit;
mod forest;
mod gbt;
mod knn;
mod ridge;
pub(crate) mod tree;

use std::fmt;
use std::sync::Arc;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use crossfit::{cross_fit_predict, CrossFitPlan};
pub use forest::RandomForest;
pub use gbt::BoostedTrees;
pub use knn::NearestNeighbors;
pub use ridge::Ridge;
pub use tree::RegressionTree;

fn default_true() -> bool {
    true
}

fn default_gbt_min_leaf() -> usize {
    5
}

/// Family-specific hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LearnerParams {
    Tree {
        max_depth: usize,
        min_leaf: usize,
    },
    Forest {
        n_trees: usize,
        /// Features tried per split; `ceil(d / 3)` when absent.
        #[serde(default)]
        mtry: Option<usize>,
        min_leaf: usize,
        #[serde(default)]
        honest: bool,
        #[serde(default = "default_true")]
        bootstrap: bool,
    },
    Gbt {
        n_rounds: usize,
        learning_rate: f64,
        max_depth: usize,
        #[serde(default = "default_gbt_min_leaf")]
        min_leaf: usize,
    },
    Knn {
        k: usize,
    },
    Ridge {
        lambda: f64,
    },
}

/// Declarative base-learner configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    #[serde(flatten)]
    pub params: LearnerParams,
    #[serde(default)]
    pub seed: u64,
}

impl LearnerSpec {
    pub fn tree(max_depth: usize, min_leaf: usize) -> Self {
        LearnerSpec { params: LearnerParams::Tree { max_depth, min_leaf }, seed: 0 }
    }

    pub fn forest() -> Self {
        LearnerSpec {
            params: LearnerParams::Forest { n_trees: 500, mtry: None, min_leaf: 5, honest: false, bootstrap: true },
            seed: 0,
        }
    }

    pub fn forest_with(n_trees: usize, min_leaf: usize) -> Self {
        LearnerSpec {
            params: LearnerParams::Forest { n_trees, mtry: None, min_leaf, honest: false, bootstrap: true },
            seed: 0,
        }
    }

    pub fn gbt() -> Self {
        Self::gbt_with(200, 0.1, 3)
    }

    pub fn gbt_with(n_rounds: usize, learning_rate: f64, max_depth: usize) -> Self {
        LearnerSpec {
            params: LearnerParams::Gbt { n_rounds, learning_rate, max_depth, min_leaf: default_gbt_min_leaf() },
            seed: 0,
        }
    }

    pub fn knn(k: usize) -> Self {
        LearnerSpec { params: LearnerParams::Knn { k }, seed: 0 }
    }

    pub fn ridge(lambda: f64) -> Self {
        LearnerSpec { params: LearnerParams::Ridge { lambda }, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Short family label used in estimator names.
    pub fn family(&self) -> &'static str {
        match self.params {
            LearnerParams::Tree { .. } => "tree",
            LearnerParams::Forest { .. } => "forest",
            LearnerParams::Gbt { .. } => "gbt",
            LearnerParams::Knn { .. } => "knn",
            LearnerParams::Ridge { .. } => "ridge",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{} learner: {m}", self.family())));
        match &self.params {
            LearnerParams::Tree { max_depth, min_leaf } => {
                if *max_depth < 1 || *min_leaf < 1 {
                    return bad("max_depth and min_leaf must be at least 1");
                }
            }
            LearnerParams::Forest { n_trees, mtry, min_leaf, .. } => {
                if *n_trees < 1 || *min_leaf < 1 || mtry.is_some_and(|m| m < 1) {
                    return bad("n_trees, mtry and min_leaf must be at least 1");
                }
            }
            LearnerParams::Gbt { learning_rate, max_depth, min_leaf, .. } => {
                if !(*learning_rate > 0.0 && *learning_rate <= 1.0) {
                    return bad("learning_rate must lie in (0, 1]");
                }
                if *max_depth < 1 || *min_leaf < 1 {
                    return bad("max_depth and min_leaf must be at least 1");
                }
            }
            LearnerParams::Knn { k } => {
                if *k < 1 {
                    return bad("k must be at least 1");
                }
            }
            LearnerParams::Ridge { lambda } => {
                if !(lambda.is_finite() && *lambda >= 0.0) {
                    return bad("lambda must be finite and non-negative");
                }
            }
        }
        Ok(())
    }
}

/// A known regression function standing in for a fitted learner.
#[derive(Clone)]
pub struct OracleFn(Arc<dyn Fn(ArrayView1<f64>) -> f64 + Send + Sync>);

impl OracleFn {
    pub fn new<F: Fn(ArrayView1<f64>) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        OracleFn(Arc::new(f))
    }
}

impl fmt::Debug for OracleFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("OracleFn")
    }
}

#[derive(Debug, Clone)]
enum ModelState {
    Tree(RegressionTree),
    Forest(RandomForest),
    Gbt(BoostedTrees),
    Knn(NearestNeighbors),
    Ridge(Ridge),
    Constant(f64),
    Oracle(OracleFn),
}

/// Trained, predict-only regression model.
#[derive(Debug, Clone)]
pub struct FittedModel {
    family: &'static str,
    n_cols: usize,
    state: ModelState,
}

impl FittedModel {
    pub fn constant(value: f64, n_cols: usize) -> Self {
        FittedModel { family: "constant", n_cols, state: ModelState::Constant(value) }
    }

    /// Wrap a known function of the encoded feature row.
    pub fn oracle(f: OracleFn, n_cols: usize) -> Self {
        FittedModel { family: "oracle", n_cols, state: ModelState::Oracle(f) }
    }

    pub fn family(&self) -> &'static str {
        self.family
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_cols {
            return Err(Error::Shape(format!(
                "model expects {} columns, query has {}",
                self.n_cols,
                x.ncols()
            )));
        }
        Ok(match &self.state {
            ModelState::Constant(v) => vec![*v; x.nrows()],
            ModelState::Oracle(f) => x.rows().into_iter().map(|r| (f.0)(r)).collect(),
            ModelState::Tree(t) => map_rows(x, |r| t.predict_row(r)),
            ModelState::Forest(m) => m.predict(x),
            ModelState::Gbt(m) => m.predict(x),
            ModelState::Knn(m) => m.predict(x),
            ModelState::Ridge(m) => map_rows(x, |r| m.predict_row(r)),
        })
    }
}

pub(crate) fn map_rows<F: FnMut(&[f64]) -> f64>(x: ArrayView2<f64>, mut f: F) -> Vec<f64> {
    let mut buf = vec![0.0; x.ncols()];
    x.rows()
        .into_iter()
        .map(|r| match r.as_slice() {
            Some(s) => f(s),
            None => {
                for (b, v) in buf.iter_mut().zip(r.iter()) {
                    *b = *v;
                }
                f(&buf)
            }
        })
        .collect()
}

/// Training rows with positive weight and weights rescaled to mean one, so
/// that multiplying every weight by a constant changes nothing.
pub(crate) struct Prepared {
    pub rows: Vec<usize>,
    pub w: Vec<f64>,
}

fn prepare(x: &ArrayView2<f64>, y: &[f64], w: Option<&[f64]>) -> Result<Prepared> {
    let n = x.nrows();
    if x.ncols() == 0 {
        return Err(Error::Fit("feature matrix has no columns".into()));
    }
    if y.len() != n {
        return Err(Error::Shape(format!("{n} feature rows but {} targets", y.len())));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Fit(format!("target at row {i} is not finite")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fit("feature matrix contains non-finite values".into()));
    }
    let mut weights = match w {
        Some(w) => {
            if w.len() != n {
                return Err(Error::Shape(format!("{n} feature rows but {} weights", w.len())));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Fit("weights must be finite and non-negative".into()));
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };
    let rows: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
    if rows.is_empty() {
        return Err(Error::Fit("no row has positive weight".into()));
    }
    let total: f64 = rows.iter().map(|&i| weights[i]).sum();
    let scale = rows.len() as f64 / total;
    for v in &mut weights {
        *v *= scale;
    }
    Ok(Prepared { rows, w: weights })
}

/// Fit a base learner by weighted squared error.
pub fn fit(spec: &LearnerSpec, x: ArrayView2<f64>, y: &[f64], w: Option<&[f64]>) -> Result<FittedModel> {
    spec.validate()?;
    let prep = prepare(&x, y, w)?;
    let state = match &spec.params {
        LearnerParams::Tree { max_depth, min_leaf } => {
            let cols = tree::Columns::from_view(&x);
            ModelState::Tree(RegressionTree::grow(
                &cols,
                y,
                &prep.w,
                prep.rows,
                tree::GrowParams { max_depth: *max_depth, min_leaf: *min_leaf, mtry: None },
                None,
            ))
        }
        LearnerParams::Forest { n_trees, mtry, min_leaf, honest, bootstrap } => {
            let d = x.ncols();
            let mtry = mtry.unwrap_or(d.div_ceil(3)).min(d);
            ModelState::Forest(RandomForest::fit(
                &x,
                y,
                &prep,
                forest::ForestParams {
                    n_trees: *n_trees,
                    mtry,
                    min_leaf: *min_leaf,
                    honest: *honest,
                    bootstrap: *bootstrap,
                },
                spec.seed,
            ))
        }
        LearnerParams::Gbt { n_rounds, learning_rate, max_depth, min_leaf } => ModelState::Gbt(
            BoostedTrees::fit(&x, y, &prep, *n_rounds, *learning_rate, *max_depth, *min_leaf),
        ),
        LearnerParams::Knn { k } => ModelState::Knn(NearestNeighbors::fit(&x, y, &prep, *k)),
        LearnerParams::Ridge { lambda } => ModelState::Ridge(Ridge::fit(&x, y, &prep, *lambda)?),
    };
    Ok(FittedModel { family: spec.family(), n_cols: x.ncols(), state })
}

/// Standardisation statistics over the given rows; constant columns get
/// unit scale.
pub(crate) fn column_scaling(x: &ArrayView2<f64>, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let d = x.ncols();
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for j in 0..d {
        let m = rows.iter().map(|&i| x[[i, j]]).sum::<f64>() / n;
        let var = rows.iter().map(|&i| (x[[i, j]] - m).powi(2)).sum::<f64>() / n;
        mean[j] = m;
        sd[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
    }
    (mean, sd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use crate::stats::spearman;
    use ndarray::Array2;
    use rand::Rng;

    fn all_specs() -> Vec<LearnerSpec> {
        vec![
            LearnerSpec::tree(6, 2),
            LearnerSpec::forest_with(30, 3).with_seed(3),
            LearnerSpec {
                params: LearnerParams::Forest { n_trees: 20, mtry: None, min_leaf: 3, honest: true, bootstrap: true },
                seed: 5,
            },
            LearnerSpec::gbt_with(30, 0.2, 3),
            LearnerSpec::knn(3),
            LearnerSpec::ridge(1.0),
        ]
    }

    fn random_x(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeding::rng(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn constant_target_predicts_constant() {
        let x = random_x(60, 3, 1);
        let y = vec![3.0; 60];
        let q = random_x(10, 3, 2);
        for spec in all_specs() {
            let m = fit(&spec, x.view(), &y, None).unwrap();
            for p in m.predict(q.view()).unwrap() {
                assert!((p - 3.0).abs() < 1e-12, "{}: {p}", spec.family());
            }
        }
    }

    #[test]
    fn knn_one_recovers_training_row() {
        let x = random_x(40, 2, 4);
        let y: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let m = fit(&LearnerSpec::knn(1), x.view(), &y, None).unwrap();
        let p = m.predict(x.slice(ndarray::s![7..8, ..])).unwrap();
        assert_eq!(p, vec![7.0]);
    }

    #[test]
    fn ridge_without_penalty_matches_normal_equations() {
        let x = random_x(50, 2, 9);
        let y: Vec<f64> = x.rows().into_iter().map(|r| 2.0 * r[0] - r[1]).collect();
        // independent route: solve X'X b = X'y with an intercept column
        let mut a = nalgebra::DMatrix::zeros(50, 3);
        for i in 0..50 {
            a[(i, 0)] = 1.0;
            a[(i, 1)] = x[[i, 0]];
            a[(i, 2)] = x[[i, 1]];
        }
        let b = nalgebra::DVector::from_vec(y.clone());
        let coef = (a.transpose() * &a).lu().solve(&(a.transpose() * &b)).unwrap();
        assert!((coef[1] - 2.0).abs() < 1e-10 && (coef[2] + 1.0).abs() < 1e-10);
        let m = fit(&LearnerSpec::ridge(0.0), x.view(), &y, None).unwrap();
        let p = m.predict(x.view()).unwrap();
        for (pi, yi) in p.iter().zip(&y) {
            assert!((pi - yi).abs() < 1e-8);
        }
    }

    #[test]
    fn forest_predictions_stay_in_target_range() {
        let x = random_x(100, 3, 11);
        let mut rng = seeding::rng(12);
        let y: Vec<f64> = (0..100).map(|i| x[[i, 0]] + rng.random_range(-0.5..0.5)).collect();
        let m = fit(&LearnerSpec::forest_with(50, 5).with_seed(1), x.view(), &y, None).unwrap();
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for p in m.predict(x.view()).unwrap() {
            assert!(p >= lo && p <= hi);
        }
    }

    #[test]
    fn gbt_zero_rounds_is_weighted_mean() {
        let x = random_x(5, 1, 3);
        let y = [1.0, 2.0, 3.0, 4.0, 5.0];
        let w = [1.0, 1.0, 1.0, 1.0, 6.0];
        let m = fit(&LearnerSpec::gbt_with(0, 0.1, 3), x.view(), &y, Some(&w)).unwrap();
        let expected = (1.0 + 2.0 + 3.0 + 4.0 + 30.0) / 10.0;
        for p in m.predict(x.view()).unwrap() {
            assert!((p - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn prediction_is_deterministic() {
        let x = random_x(80, 3, 21);
        let y: Vec<f64> = x.rows().into_iter().map(|r| r[0] * r[1]).collect();
        for spec in all_specs() {
            let a = fit(&spec, x.view(), &y, None).unwrap();
            let b = fit(&spec, x.view(), &y, None).unwrap();
            let pa = a.predict(x.view()).unwrap();
            assert_eq!(pa, a.predict(x.view()).unwrap());
            assert_eq!(pa, b.predict(x.view()).unwrap());
        }
    }

    #[test]
    fn errors() {
        let x = random_x(5, 2, 1);
        let y = [1.0; 5];
        assert!(matches!(fit(&LearnerSpec::ridge(1.0), x.view(), &y, Some(&[0.0; 5])), Err(Error::Fit(_))));
        let empty = Array2::<f64>::zeros((5, 0));
        assert!(matches!(fit(&LearnerSpec::ridge(1.0), empty.view(), &y, None), Err(Error::Fit(_))));
        let m = fit(&LearnerSpec::knn(2), x.view(), &y, None).unwrap();
        let wide = random_x(2, 3, 1);
        assert!(matches!(m.predict(wide.view()), Err(Error::Shape(_))));
        assert!(LearnerSpec::gbt_with(10, 1.5, 3).validate().is_err());
        assert!(LearnerSpec::ridge(-1.0).validate().is_err());
    }

    #[test]
    fn weight_scaling_invariance() {
        let x = random_x(120, 3, 31);
        let mut rng = seeding::rng(32);
        let y: Vec<f64> = (0..120).map(|i| x[[i, 0]] - x[[i, 2]] + rng.random_range(-0.3..0.3)).collect();
        let w: Vec<f64> = (0..120).map(|_| rng.random_range(0.1..2.0)).collect();
        for spec in all_specs() {
            let base = fit(&spec, x.view(), &y, Some(&w)).unwrap().predict(x.view()).unwrap();
            for c in [0.25, 4.0, 3.0] {
                let ws: Vec<f64> = w.iter().map(|v| v * c).collect();
                let p = fit(&spec, x.view(), &y, Some(&ws)).unwrap().predict(x.view()).unwrap();
                for (a, b) in base.iter().zip(&p) {
                    assert!((a - b).abs() < 1e-9, "{} c={c}: {a} vs {b}", spec.family());
                }
            }
        }
    }

    #[test]
    fn single_tree_forest_equals_tree() {
        let x = random_x(150, 4, 41);
        let y: Vec<f64> = x.rows().into_iter().map(|r| r[0].sin() + r[3]).collect();
        let tree = fit(&LearnerSpec::tree(usize::MAX, 3), x.view(), &y, None).unwrap();
        let forest = LearnerSpec {
            params: LearnerParams::Forest { n_trees: 1, mtry: Some(4), min_leaf: 3, honest: false, bootstrap: false },
            seed: 77,
        };
        let f = fit(&forest, x.view(), &y, None).unwrap();
        let q = random_x(50, 4, 42);
        assert_eq!(tree.predict(q.view()).unwrap(), f.predict(q.view()).unwrap());
    }

    #[test]
    fn monotone_sanity_for_tree_families() {
        let n = 200;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / n as f64);
        let y: Vec<f64> = x.column(0).to_vec();
        for spec in [LearnerSpec::tree(10, 2), LearnerSpec::forest_with(50, 5).with_seed(2), LearnerSpec::gbt()] {
            let p = fit(&spec, x.view(), &y, None).unwrap().predict(x.view()).unwrap();
            let rho = spearman(&y, &p);
            assert!(rho >= 0.99, "{}: {rho}", spec.family());
        }
    }

    #[test]
    fn ridge_ignores_duplicated_column() {
        let x = random_x(40, 2, 51);
        let y: Vec<f64> = x.rows().into_iter().map(|r| r[0] + 0.5 * r[1] + 0.1).collect();
        let mut x2 = Array2::zeros((40, 3));
        x2.slice_mut(ndarray::s![.., 0..2]).assign(&x);
        x2.column_mut(2).assign(&x.column(0));
        for lambda in [0.1, 1.0, 10.0] {
            let a = fit(&LearnerSpec::ridge(lambda), x.view(), &y, None).unwrap().predict(x.view()).unwrap();
            let b = fit(&LearnerSpec::ridge(lambda), x2.view(), &y, None).unwrap().predict(x2.view()).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-6);
            }
        }
    }
}
