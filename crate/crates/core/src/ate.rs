//! Average treatment effect estimators (IPW, regression, AIPW, within-cluster
//! matching) and the cluster bootstrap used for their intervals.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{ClusterKey, Dataset};
use crate::error::{Error, Result};
use crate::nuisance::{NuisanceModels, NuisanceValues};
use crate::seeding::{derive_seed, par_map, rng};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[allow(clippy::upper_case_acronyms)]
pub enum AteTag {
    IPW,
    REG,
    AIPW,
    MATCH,
}

impl AteTag {
    pub const ALL: [AteTag; 4] = [AteTag::IPW, AteTag::REG, AteTag::AIPW, AteTag::MATCH];
}

impl fmt::Display for AteTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AteTag::IPW => "IPW",
            AteTag::REG => "REG",
            AteTag::AIPW => "AIPW",
            AteTag::MATCH => "MATCH",
        })
    }
}

impl FromStr for AteTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "IPW" => Ok(AteTag::IPW),
            "REG" => Ok(AteTag::REG),
            "AIPW" => Ok(AteTag::AIPW),
            "MATCH" => Ok(AteTag::MATCH),
            _ => Err(Error::Config(format!("unknown ATE estimator `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteEstimate {
    pub tag: AteTag,
    pub point: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    /// Bootstrap standard error.
    pub se: f64,
    pub n: usize,
    pub diagnostics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { replicates: 2000, level: 0.95, seed: 0 }
    }
}

impl BootstrapConfig {
    pub fn new(replicates: usize, level: f64, seed: u64) -> Self {
        BootstrapConfig { replicates, level, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 100 {
            return Err(Error::Config(format!("bootstrap needs at least 100 replicates, got {}", self.replicates)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("confidence level {} must lie in (0, 1)", self.level)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub lo: f64,
    pub hi: f64,
    pub se: f64,
    pub replicates: Vec<f64>,
    pub failures: usize,
}

/// Resample whole groups with replacement and recompute `statistic` on the
/// concatenated row list. Replicates on which the statistic fails are
/// redrawn; more than `B` failures in total is an error.
pub fn cluster_bootstrap<F>(groups: &[Vec<usize>], cfg: &BootstrapConfig, statistic: F) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&[usize]) -> Result<f64> + Sync + Send,
{
    cfg.validate()?;
    if groups.len() < 2 {
        return Err(Error::Estimation("cluster bootstrap needs at least two clusters".into()));
    }
    let b = cfg.replicates;
    let draws = par_map(b, |r| {
        let mut g = rng(derive_seed(cfg.seed, r as u64));
        let mut rows = Vec::new();
        for failures in 0..=b {
            rows.clear();
            for _ in 0..groups.len() {
                rows.extend_from_slice(&groups[g.random_range(0..groups.len())]);
            }
            if let Ok(v) = statistic(&rows) {
                if v.is_finite() {
                    return (Some(v), failures);
                }
            }
        }
        (None, b + 1)
    });
    let failures: usize = draws.iter().map(|d| d.1).sum();
    if failures > b {
        return Err(Error::Estimation(format!("bootstrap statistic failed on {failures} resamples")));
    }
    if failures > 0 {
        log::warn!("bootstrap redrew {failures} failed resamples");
    }
    Ok((draws.into_iter().map(|d| d.0.expect("bounded failures")).collect(), failures))
}

/// Percentile interval from the cluster bootstrap, widened if necessary so
/// that it contains `point`.
pub fn cluster_bootstrap_ci<F>(groups: &[Vec<usize>], cfg: &BootstrapConfig, point: f64, statistic: F) -> Result<BootstrapResult>
where
    F: Fn(&[usize]) -> Result<f64> + Sync + Send,
{
    let (reps, failures) = cluster_bootstrap(groups, cfg, statistic)?;
    let sorted = stats::sorted_copy(&reps);
    let a = (1.0 - cfg.level) / 2.0;
    let lo = stats::quantile_sorted(&sorted, a).min(point);
    let hi = stats::quantile_sorted(&sorted, 1.0 - a).max(point);
    Ok(BootstrapResult { lo, hi, se: stats::sample_sd(&reps), replicates: reps, failures })
}

/// Row groups by cluster, falling back to one group per unit.
pub fn row_groups(ds: &Dataset) -> Vec<Vec<usize>> {
    ds.table().cluster_groups().into_iter().map(|(_, rows)| rows).collect()
}

pub fn ipw_score(z: u8, y: f64, e: f64) -> f64 {
    let zf = f64::from(z);
    y * zf / e - y * (1.0 - zf) / (1.0 - e)
}

pub fn regression_score(mu0: f64, mu1: f64) -> f64 {
    mu1 - mu0
}

/// Summand of the AIPW estimator as displayed with its `1/(2n)` factor:
/// the estimate is the mean of these scores divided by two. This is not the
/// usual efficient-influence-function form.
pub fn aipw_score(z: u8, y: f64, e: f64, mu0: f64, mu1: f64) -> f64 {
    let zf = f64::from(z);
    (y - mu0) * zf / e + (mu1 - y) * (1.0 - zf) / (1.0 - e)
}

fn scores(tag: AteTag, ds: &Dataset, v: &NuisanceValues) -> Vec<f64> {
    let (z, y) = (ds.treatment(), ds.outcome());
    (0..ds.n_rows())
        .map(|i| match tag {
            AteTag::IPW => ipw_score(z[i], y[i], v.e[i]),
            AteTag::REG => regression_score(v.mu0[i], v.mu1[i]),
            AteTag::AIPW => aipw_score(z[i], y[i], v.e[i], v.mu0[i], v.mu1[i]) / 2.0,
            AteTag::MATCH => unreachable!("matching has no per-unit score"),
        })
        .collect()
}

/// IPW, REG or AIPW from nuisance values at the units of `ds`. The bootstrap
/// resamples clusters of per-unit scores with the nuisance fits held fixed.
pub fn ate_from_values(tag: AteTag, ds: &Dataset, v: &NuisanceValues, boot: &BootstrapConfig) -> Result<AteEstimate> {
    if tag == AteTag::MATCH {
        return Err(Error::Config("matching estimates come from matched pairs".into()));
    }
    if v.e.len() != ds.n_rows() || v.mu0.len() != ds.n_rows() || v.mu1.len() != ds.n_rows() {
        return Err(Error::Shape("nuisance values must have one entry per row".into()));
    }
    if v.e.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::Estimation("propensity scores must lie strictly inside (0, 1)".into()));
    }
    let s = scores(tag, ds, v);
    let point = stats::mean(&s);
    let groups = row_groups(ds);
    let mean_of = |rows: &[usize]| Ok(rows.iter().map(|&i| s[i]).sum::<f64>() / rows.len() as f64);
    let b = cluster_bootstrap_ci(&groups, boot, point, mean_of)?;
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("n_clusters".to_string(), groups.len() as f64);
    Ok(AteEstimate {
        tag,
        point,
        ci_lo: b.lo,
        ci_hi: b.hi,
        level: boot.level,
        se: b.se,
        n: ds.n_rows(),
        diagnostics,
    })
}

pub fn ate_ipw(ds: &Dataset, nm: &NuisanceModels, boot: &BootstrapConfig) -> Result<AteEstimate> {
    ate_from_values(AteTag::IPW, ds, &nm.training_values(ds)?, boot)
}

pub fn ate_regression(ds: &Dataset, nm: &NuisanceModels, boot: &BootstrapConfig) -> Result<AteEstimate> {
    ate_from_values(AteTag::REG, ds, &nm.training_values(ds)?, boot)
}

pub fn ate_aipw(ds: &Dataset, nm: &NuisanceModels, boot: &BootstrapConfig) -> Result<AteEstimate> {
    ate_from_values(AteTag::AIPW, ds, &nm.training_values(ds)?, boot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Mahalanobis,
    /// Per-feature variances only, used when the pooled covariance is
    /// singular.
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub treated: usize,
    pub control: usize,
    /// `y_treated - y_control`.
    pub difference: f64,
    pub distance: f64,
    pub cluster: ClusterKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPairs {
    pub pairs: Vec<MatchedPair>,
    pub features: Vec<String>,
    pub metric: DistanceMetric,
    /// Treated units without an in-cluster control.
    pub n_unmatched: usize,
}

impl MatchedPairs {
    pub fn differences(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.difference).collect()
    }
}

/// Inverse pooled covariance of the named features, or the diagonal
/// fallback. Zero-variance features get zero weight.
fn metric_matrix(x: &DMatrix<f64>) -> (DMatrix<f64>, DistanceMetric) {
    let n = x.nrows() as f64;
    let d = x.ncols();
    let means = x.row_mean();
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= &means;
    }
    let cov = c.transpose() * &c / (n - 1.0).max(1.0);
    let scale = cov.diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if scale > 0.0 {
        if let Some(ch) = cov.clone().cholesky() {
            let inv = ch.inverse();
            // reject numerically singular covariances
            let cond = (&inv * &cov - DMatrix::identity(d, d)).abs().max();
            if cond < 1e-6 {
                return (inv, DistanceMetric::Mahalanobis);
            }
        }
    }
    log::warn!("pooled covariance of matching features is singular; using per-feature variances");
    let diag = DVector::from_iterator(d, cov.diagonal().iter().map(|&v| if v > 0.0 { 1.0 / v } else { 0.0 }));
    (DMatrix::from_diagonal(&diag), DistanceMetric::Diagonal)
}

/// Match every treated unit (with replacement) to the control unit in its
/// own cluster closest in Mahalanobis distance on `features`; ties go to the
/// lowest row index.
pub fn match_pairs(ds: &Dataset, features: &[String]) -> Result<MatchedPairs> {
    if !ds.table().has_clusters() {
        return Err(Error::Config("matching requires a cluster column".into()));
    }
    if features.is_empty() {
        return Err(Error::Config("matching needs at least one feature".into()));
    }
    let n = ds.n_rows();
    let mut x = DMatrix::zeros(n, features.len());
    for (j, name) in features.iter().enumerate() {
        let col = ds.table().column(name)?;
        for i in 0..n {
            x[(i, j)] = col
                .numeric_value(i)
                .ok_or_else(|| Error::Config(format!("matching feature `{name}` must be numeric")))?;
        }
    }
    let (m, metric) = metric_matrix(&x);
    let z = ds.treatment();
    let y = ds.outcome();
    let mut pairs = Vec::new();
    let mut n_unmatched = 0;
    for (key, rows) in ds.table().cluster_groups() {
        let controls: Vec<usize> = rows.iter().copied().filter(|&i| z[i] == 0).collect();
        for &t in rows.iter().filter(|&&i| z[i] == 1) {
            let mut best: Option<(f64, usize)> = None;
            for &c in &controls {
                let diff = (x.row(t) - x.row(c)).transpose();
                let dist = (diff.transpose() * &m * &diff)[(0, 0)].max(0.0).sqrt();
                if best.is_none_or(|(bd, _)| dist < bd) {
                    best = Some((dist, c));
                }
            }
            match best {
                Some((distance, c)) => pairs.push(MatchedPair {
                    treated: t,
                    control: c,
                    difference: y[t] - y[c],
                    distance,
                    cluster: key.clone(),
                }),
                None => n_unmatched += 1,
            }
        }
    }
    pairs.sort_by_key(|p| p.treated);
    Ok(MatchedPairs { pairs, features: features.to_vec(), metric, n_unmatched })
}

/// Mean matched-pair difference; the interval resamples clusters of pairs.
pub fn ate_matching(pairs: &MatchedPairs, boot: &BootstrapConfig) -> Result<AteEstimate> {
    if pairs.pairs.is_empty() {
        return Err(Error::Estimation("no matched pairs".into()));
    }
    let d = pairs.differences();
    let point = stats::mean(&d);
    let mut by_cluster: BTreeMap<&ClusterKey, Vec<usize>> = BTreeMap::new();
    for (k, p) in pairs.pairs.iter().enumerate() {
        by_cluster.entry(&p.cluster).or_default().push(k);
    }
    let groups: Vec<Vec<usize>> = by_cluster.into_values().collect();
    let mean_of = |rows: &[usize]| Ok(rows.iter().map(|&i| d[i]).sum::<f64>() / rows.len() as f64);
    let b = cluster_bootstrap_ci(&groups, boot, point, mean_of)?;
    let mut controls: Vec<usize> = pairs.pairs.iter().map(|p| p.control).collect();
    controls.sort_unstable();
    controls.dedup();
    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("n_pairs".to_string(), pairs.pairs.len() as f64);
    diagnostics.insert("n_unmatched".to_string(), pairs.n_unmatched as f64);
    diagnostics.insert("n_distinct_controls".to_string(), controls.len() as f64);
    diagnostics.insert("n_clusters".to_string(), groups.len() as f64);
    diagnostics.insert(
        "diagonal_metric".to_string(),
        if pairs.metric == DistanceMetric::Diagonal { 1.0 } else { 0.0 },
    );
    Ok(AteEstimate {
        tag: AteTag::MATCH,
        point,
        ci_lo: b.lo,
        ci_hi: b.hi,
        level: boot.level,
        se: b.se,
        n: pairs.pairs.len(),
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, FeatureTable};

    fn ds(x: Vec<f64>, clusters: Vec<&str>, z: Vec<u8>, y: Vec<f64>) -> Dataset {
        let n = x.len();
        let t = FeatureTable::new(
            (0..n).map(|i| format!("u{i}")).collect(),
            vec![Column::continuous("x1", x)],
            Some(clusters.into_iter().map(|c| Some(c.to_string())).collect()),
        )
        .unwrap();
        Dataset::new(t, z, y).unwrap()
    }

    fn values(n: usize, e: f64, mu0: f64, mu1: f64) -> NuisanceValues {
        NuisanceValues { mu0: vec![mu0; n], mu1: vec![mu1; n], e: vec![e; n], e_raw: vec![e; n] }
    }

    fn boot() -> BootstrapConfig {
        BootstrapConfig::new(200, 0.95, 1)
    }

    #[test]
    fn hand_evaluated_points() {
        let d = ds(vec![0.0, 1.0], vec!["a", "b"], vec![1, 0], vec![2.0, 1.0]);
        let ipw = ate_from_values(AteTag::IPW, &d, &values(2, 0.5, 0.0, 0.0), &boot()).unwrap();
        assert_eq!(ipw.point, 1.0);
        let reg = ate_from_values(AteTag::REG, &d, &values(2, 0.5, 1.0, 3.0), &boot()).unwrap();
        assert_eq!(reg.point, 2.0);
        let d = ds(vec![0.0, 1.0], vec!["a", "b"], vec![1, 0], vec![1.0, 0.0]);
        let aipw = ate_from_values(AteTag::AIPW, &d, &values(2, 0.5, 0.0, 1.0), &boot()).unwrap();
        assert_eq!(aipw.point, 1.0);
        for e in [ipw, reg, aipw] {
            assert!(e.ci_lo <= e.point && e.point <= e.ci_hi);
        }
    }

    #[test]
    fn zero_outcomes_give_zero_ipw() {
        let d = ds(vec![0.0; 4], vec!["a", "a", "b", "b"], vec![1, 0, 1, 0], vec![0.0; 4]);
        let v = NuisanceValues { mu0: vec![0.0; 4], mu1: vec![0.0; 4], e: vec![0.2, 0.4, 0.6, 0.8], e_raw: vec![0.0; 4] };
        let est = ate_from_values(AteTag::IPW, &d, &v, &boot()).unwrap();
        assert_eq!(est.point, 0.0);
        assert_eq!((est.ci_lo, est.ci_hi), (0.0, 0.0));
    }

    #[test]
    fn ipw_at_half_is_twice_difference_of_arm_totals() {
        let y = vec![3.0, 1.0, 4.0, 1.5, 5.0, 9.0];
        let z = vec![1, 0, 1, 0, 1, 0];
        let d = ds(vec![0.0; 6], vec!["a", "a", "b", "b", "c", "c"], z.clone(), y.clone());
        let est = ate_from_values(AteTag::IPW, &d, &values(6, 0.5, 0.0, 0.0), &boot()).unwrap();
        let t: f64 = (0..6).filter(|&i| z[i] == 1).map(|i| y[i]).sum();
        let c: f64 = (0..6).filter(|&i| z[i] == 0).map(|i| y[i]).sum();
        assert!((est.point - 2.0 * (t - c) / 6.0).abs() < 1e-12);
    }

    #[test]
    fn matching_prefers_identical_then_lowest_index() {
        let d = ds(
            vec![0.0, 5.0, 0.0, 0.0, 1.0, 2.0],
            vec!["a", "a", "a", "a", "b", "b"],
            vec![1, 0, 0, 0, 1, 0],
            vec![2.0, 0.0, 1.0, 7.0, 3.0, 1.0],
        );
        let p = match_pairs(&d, &["x1".to_string()]).unwrap();
        assert_eq!(p.pairs.len(), 2);
        assert_eq!((p.pairs[0].treated, p.pairs[0].control), (0, 2));
        assert_eq!(p.pairs[0].distance, 0.0);
        assert_eq!((p.pairs[1].treated, p.pairs[1].control), (4, 5));
        let est = ate_matching(&p, &boot()).unwrap();
        assert_eq!(est.point, 1.5);
        assert_eq!(est.diagnostics["n_pairs"], 2.0);
    }

    #[test]
    fn treated_without_in_cluster_control_is_dropped() {
        let d = ds(vec![0.0, 1.0, 2.0], vec!["a", "b", "b"], vec![1, 1, 0], vec![1.0, 1.0, 0.0]);
        let p = match_pairs(&d, &["x1".to_string()]).unwrap();
        assert_eq!(p.pairs.len(), 1);
        assert_eq!(p.n_unmatched, 1);
    }

    #[test]
    fn constant_feature_falls_back_to_diagonal() {
        let t = FeatureTable::new(
            (0..4).map(|i| format!("u{i}")).collect(),
            vec![Column::continuous("a", vec![1.0, 2.0, 3.0, 4.0]), Column::continuous("b", vec![2.0, 4.0, 6.0, 8.0])],
            Some(vec![Some("s".into()); 4]),
        )
        .unwrap();
        let d = Dataset::new(t, vec![1, 0, 1, 0], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let p = match_pairs(&d, &["a".into(), "b".into()]).unwrap();
        assert_eq!(p.metric, DistanceMetric::Diagonal);
        assert_eq!(p.pairs.len(), 2);
    }

    #[test]
    fn matching_errors() {
        let empty = MatchedPairs { pairs: vec![], features: vec![], metric: DistanceMetric::Mahalanobis, n_unmatched: 3 };
        assert!(matches!(ate_matching(&empty, &boot()), Err(Error::Estimation(_))));
        let d = ds(vec![0.0, 1.0], vec!["a", "a"], vec![1, 0], vec![1.0, 0.0]);
        assert!(matches!(match_pairs(&d, &["nope".into()]), Err(Error::Name(_))));
    }

    #[test]
    fn bootstrap_contracts() {
        let groups: Vec<Vec<usize>> = (0..10).map(|i| vec![i]).collect();
        let r = cluster_bootstrap_ci(&groups, &boot(), 0.25, |_| Ok(0.25)).unwrap();
        assert_eq!((r.lo, r.hi), (0.25, 0.25));
        let a = cluster_bootstrap_ci(&groups, &boot(), 4.5, |rows| Ok(stats::mean(&rows.iter().map(|&i| i as f64).collect::<Vec<_>>()))).unwrap();
        let b = cluster_bootstrap_ci(&groups, &boot(), 4.5, |rows| Ok(stats::mean(&rows.iter().map(|&i| i as f64).collect::<Vec<_>>()))).unwrap();
        assert_eq!(a, b);
        assert!(matches!(cluster_bootstrap_ci(&groups, &BootstrapConfig::new(99, 0.95, 0), 0.0, |_| Ok(0.0)), Err(Error::Config(_))));
        assert!(matches!(cluster_bootstrap_ci(&groups[..1], &boot(), 0.0, |_| Ok(0.0)), Err(Error::Estimation(_))));
        let always_fails = cluster_bootstrap_ci(&groups, &boot(), 0.0, |_| Err(Error::Estimation("x".into())));
        assert!(matches!(always_fails, Err(Error::Estimation(_))));
    }

    #[test]
    fn failed_replicates_are_redrawn() {
        let groups: Vec<Vec<usize>> = (0..10).map(|i| vec![i]).collect();
        let r = cluster_bootstrap_ci(&groups, &boot(), 0.0, |rows| {
            if rows.iter().filter(|&&i| i == 0).count() >= 3 {
                Err(Error::Estimation("unit 0 drawn three times".into()))
            } else {
                Ok(1.0)
            }
        })
        .unwrap();
        assert!(r.failures > 0 && r.failures <= 200);
        assert_eq!(r.replicates.len(), 200);
    }
}
