//! Curves over fitted CATE models (partial dependence and marginal CATE),
//! subgroup effects, and the exploration/validation workflow.

mod subgroup;
mod workflow;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{ColumnData, FeatureTable, GridValue};
use crate::error::{Error, Result};
use crate::meta_learners::CateModel;
use crate::seeding::par_map;
use crate::stats;

pub use subgroup::{
    compare_subgroup, subgroup_ate, subgroup_difference_test, Condition, GroupScores, Op, SubgroupAteInputs,
    SubgroupComparison, SubgroupDef,
};
pub use workflow::{explore_validate, ExploreValidateReport, HypothesisResult, Workflow, WorkflowConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Marginal,
    Pdp,
}

impl CurveKind {
    pub fn label(self) -> &'static str {
        match self {
            CurveKind::Marginal => "marginal",
            CurveKind::Pdp => "pdp",
        }
    }
}

/// One curve per estimator over a common grid of feature values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveTable {
    pub feature: String,
    pub kind: CurveKind,
    pub grid: Vec<GridValue>,
    pub estimators: Vec<String>,
    /// `values[g][m]` is estimator `m` at grid point `g`.
    pub values: Vec<Vec<f64>>,
    /// Units per bin for marginal curves.
    pub counts: Option<Vec<usize>>,
}

impl CurveTable {
    pub fn curve(&self, estimator: &str) -> Result<Vec<f64>> {
        let j = self
            .estimators
            .iter()
            .position(|e| e == estimator)
            .ok_or_else(|| Error::Name(format!("no estimator named `{estimator}`")))?;
        Ok(self.values.iter().map(|r| r[j]).collect())
    }

    /// Long format: `feature,grid_value,estimator,value,kind`.
    pub fn write_long_csv<W: Write>(&self, wtr: &mut csv::Writer<W>) -> Result<()> {
        for (g, row) in self.grid.iter().zip(&self.values) {
            for (name, v) in self.estimators.iter().zip(row) {
                let gv = g.to_string();
                let value = crate::data::format_number(*v);
                wtr.write_record([self.feature.as_str(), gv.as_str(), name.as_str(), value.as_str(), self.kind.label()])?;
            }
        }
        Ok(())
    }
}

pub const LONG_CSV_HEADER: [&str; 5] = ["feature", "grid_value", "estimator", "value", "kind"];

fn check_grid(table: &FeatureTable, feature: &str, grid: &[GridValue]) -> Result<()> {
    let col = table.column(feature)?;
    if grid.is_empty() {
        return Err(Error::Range("the grid is empty".into()));
    }
    match &col.data {
        ColumnData::Continuous(_) => {
            let mut prev = f64::NEG_INFINITY;
            for g in grid {
                let GridValue::Number(v) = g else {
                    return Err(Error::Range(format!("`{feature}` is continuous; grid value `{g}` is not a number")));
                };
                if !(*v > prev) || !v.is_finite() {
                    return Err(Error::Range(format!("grid for `{feature}` must be finite and strictly increasing")));
                }
                prev = *v;
            }
        }
        ColumnData::Categorical(_) => {
            let labels: Vec<String> = grid.iter().map(ToString::to_string).collect();
            let mut sorted = labels.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != labels.len() {
                return Err(Error::Range(format!("grid levels for `{feature}` must be distinct")));
            }
        }
    }
    Ok(())
}

/// Partial dependence: the mean estimate over all units with `feature` set
/// to each grid value.
pub fn pdp(models: &[CateModel], table: &FeatureTable, feature: &str, grid: &[GridValue]) -> Result<CurveTable> {
    check_grid(table, feature, grid)?;
    let per_point = par_map(grid.len(), |g| -> Result<Vec<f64>> {
        let t = table.with_feature_value(feature, &grid[g])?;
        models.iter().map(|m| Ok(stats::mean(&m.predict_cate(&t)?))).collect()
    });
    Ok(CurveTable {
        feature: feature.to_string(),
        kind: CurveKind::Pdp,
        grid: grid.to_vec(),
        estimators: models.iter().map(CateModel::name).collect(),
        values: per_point.into_iter().collect::<Result<_>>()?,
        counts: None,
    })
}

/// Default PDP grid: `points` evenly spaced quantiles of a continuous
/// feature (duplicates removed), or every level of a categorical one.
pub fn default_grid(table: &FeatureTable, feature: &str, points: usize) -> Result<Vec<GridValue>> {
    let col = table.column(feature)?;
    Ok(match &col.data {
        ColumnData::Continuous(v) => {
            let sorted = stats::sorted_copy(v);
            let k = points.max(1);
            let mut out: Vec<f64> = (0..k)
                .map(|i| if k == 1 { 0.5 } else { i as f64 / (k - 1) as f64 })
                .map(|q| stats::quantile_sorted(&sorted, q))
                .collect();
            out.dedup();
            out.into_iter().map(GridValue::Number).collect()
        }
        ColumnData::Categorical(v) => {
            let mut levels = v.clone();
            levels.sort();
            levels.dedup();
            levels.into_iter().map(GridValue::Level).collect()
        }
    })
}

/// Groups of rows sharing a bin: equal-count bins over the sorted values
/// (ties never straddle a bin edge) or one bin per level.
fn bins(table: &FeatureTable, feature: &str, n_bins: usize) -> Result<Vec<(GridValue, Vec<usize>)>> {
    let col = table.column(feature)?;
    let n = table.n_rows();
    match &col.data {
        ColumnData::Continuous(v) => {
            if n_bins == 0 {
                return Err(Error::Range("the number of bins must be positive".into()));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
            let mut out = Vec::new();
            let mut start = 0;
            for b in 1..=n_bins {
                let mut end = (b * n) / n_bins;
                if end <= start {
                    continue;
                }
                while end < n && v[idx[end]] == v[idx[end - 1]] {
                    end += 1;
                }
                let rows: Vec<usize> = idx[start..end].to_vec();
                let centre = stats::mean(&rows.iter().map(|&i| v[i]).collect::<Vec<_>>());
                out.push((GridValue::Number(centre), rows));
                start = end;
                if start >= n {
                    break;
                }
            }
            Ok(out)
        }
        ColumnData::Categorical(v) => {
            let mut levels = v.clone();
            levels.sort();
            levels.dedup();
            Ok(levels
                .into_iter()
                .map(|l| {
                    let rows = (0..n).filter(|&i| v[i] == l).collect();
                    (GridValue::Level(l), rows)
                })
                .collect())
        }
    }
}

pub const DEFAULT_MARGINAL_BINS: usize = 20;

/// Marginal CATE: the mean estimate over the units falling in each bin of
/// `feature`, with no intervention on the features. Continuous features use
/// `n_bins` equal-count bins; categorical features use their levels.
pub fn marginal_cate(models: &[CateModel], table: &FeatureTable, feature: &str, n_bins: usize) -> Result<CurveTable> {
    let groups: Vec<(GridValue, Vec<usize>)> = bins(table, feature, n_bins)?
        .into_iter()
        .filter(|(g, rows)| {
            if rows.is_empty() {
                log::info!("marginal CATE: dropping empty bin {g}");
            }
            !rows.is_empty()
        })
        .collect();
    if groups.is_empty() {
        return Err(Error::Range(format!("every bin of `{feature}` is empty")));
    }
    let preds = par_map(models.len(), |m| models[m].predict_cate(table));
    let preds: Vec<Vec<f64>> = preds.into_iter().collect::<Result<_>>()?;
    let values = groups
        .iter()
        .map(|(_, rows)| preds.iter().map(|p| rows.iter().map(|&i| p[i]).sum::<f64>() / rows.len() as f64).collect())
        .collect();
    Ok(CurveTable {
        feature: feature.to_string(),
        kind: CurveKind::Marginal,
        estimators: models.iter().map(CateModel::name).collect(),
        counts: Some(groups.iter().map(|(_, r)| r.len()).collect()),
        grid: groups.into_iter().map(|(g, _)| g).collect(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_learners::{FittedModel, OracleFn};
    use crate::data::{Column, EncodingPlan};

    fn table() -> FeatureTable {
        FeatureTable::new(
            (0..6).map(|i| format!("u{i}")).collect(),
            vec![
                Column::continuous("x1", vec![0.0, 1.0, 1.0, 1.0, 2.0, 3.0]),
                Column::continuous("x2", vec![5.0, -1.0, 2.0, 0.5, 0.0, 1.0]),
                Column::categorical("g", ["a", "b", "a", "c", "b", "a"].map(String::from).to_vec()),
            ],
            None,
        )
        .unwrap()
    }

    fn oracle(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> CateModel {
        let plan = EncodingPlan::fit(&table(), false).unwrap();
        let k = plan.n_columns();
        let m0 = FittedModel::constant(0.0, k);
        let m1 = FittedModel::oracle(OracleFn::new(move |r| f(r.as_slice().unwrap())), k);
        CateModel::t_from_models(plan, m0, m1)
    }

    #[test]
    fn constant_model_gives_flat_curves() {
        let m = oracle(|_| 0.25);
        let t = table();
        let grid = default_grid(&t, "x1", 4).unwrap();
        let p = pdp(std::slice::from_ref(&m), &t, "x1", &grid).unwrap();
        assert!(p.values.iter().all(|r| r[0] == 0.25));
        let mc = marginal_cate(&[m], &t, "g", 0).unwrap();
        assert_eq!(mc.grid.len(), 3);
        assert!(mc.values.iter().all(|r| r[0] == 0.25));
    }

    #[test]
    fn additive_oracle_pdp() {
        let m = oracle(|r| r[0] * r[0] + 2.0 * r[1]);
        let t = table();
        let grid = vec![GridValue::Number(-1.0), GridValue::Number(0.5)];
        let p = pdp(&[m], &t, "x1", &grid).unwrap();
        let mean_h = 2.0 * (5.0 - 1.0 + 2.0 + 0.5 + 0.0 + 1.0) / 6.0;
        assert!((p.values[0][0] - (1.0 + mean_h)).abs() < 1e-12);
        assert!((p.values[1][0] - (0.25 + mean_h)).abs() < 1e-12);
        let one = pdp(&[oracle(|_| 1.0)], &t, "x1", &grid[..1]).unwrap();
        assert_eq!(one.values.len(), 1);
    }

    #[test]
    fn equal_count_bins_keep_ties() {
        let b = bins(&table(), "x1", 3).unwrap();
        let sizes: Vec<usize> = b.iter().map(|(_, r)| r.len()).collect();
        assert_eq!(sizes, vec![4, 2]);
        let one_each = marginal_cate(&[oracle(|r| r[1])], &table(), "x2", 6).unwrap();
        assert_eq!(one_each.counts, Some(vec![1; 6]));
        let x2 = [-1.0, 0.0, 0.5, 1.0, 2.0, 5.0];
        for (row, x) in one_each.values.iter().zip(x2) {
            assert_eq!(row[0], x);
        }
    }

    #[test]
    fn grid_errors() {
        let m = oracle(|_| 0.0);
        let t = table();
        assert!(matches!(pdp(std::slice::from_ref(&m), &t, "nope", &[GridValue::Number(0.0)]), Err(Error::Name(_))));
        assert!(matches!(pdp(std::slice::from_ref(&m), &t, "x1", &[]), Err(Error::Range(_))));
        let bad = [GridValue::Number(1.0), GridValue::Number(1.0)];
        assert!(matches!(pdp(&[m], &t, "x1", &bad), Err(Error::Range(_))));
    }

    #[test]
    fn long_csv_layout() {
        let p = pdp(&[oracle(|_| 0.5)], &table(), "g", &[GridValue::Level("a".into())]).unwrap();
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(LONG_CSV_HEADER).unwrap();
        p.write_long_csv(&mut w).unwrap();
        let s = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(s, "feature,grid_value,estimator,value,kind\ng,a,T_constant_nocluster,0.5,pdp\n");
    }
}
