//! Synthetic data-generating processes with known effect, propensity and
//! outcome surfaces.
//!
//! Every process draws `x1..xd ~ U(-1, 1)` and assigns units uniformly to
//! schools (the cluster column `school`). `goldilocks` and `clustered_school`
//! add the school-level feature `achievement ~ U(-1, 1)`; `clustered_school`
//! also adds the categorical school feature `urbanicity` with levels 1-4.
//! Outcomes are `Y = mu_Z(x) + u_school + eps`, with the school effect `u`
//! treated as noise: the true surfaces depend on features only.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Column, Dataset, FeatureTable};
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, rng};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    /// `tau = effect`, `e = propensity`.
    ConstantEffect,
    /// `tau = effect + 0.5 x1`, randomized.
    LinearTau,
    /// Effect peaks at mid-range school achievement.
    Goldilocks,
    /// Propensity rises linearly in `x1` from 0.15 to 0.46.
    Confounded,
    /// Propensity 0.05, nonlinear baseline, `tau = 1 + x1`.
    UnbalancedArms,
    /// Effect 0.16 at urbanicity-3 schools and 0.28 elsewhere.
    ClusteredSchool,
}

impl DgpKind {
    pub const ALL: [DgpKind; 6] = [
        DgpKind::ConstantEffect,
        DgpKind::LinearTau,
        DgpKind::Goldilocks,
        DgpKind::Confounded,
        DgpKind::UnbalancedArms,
        DgpKind::ClusteredSchool,
    ];

    pub fn is_randomized(self) -> bool {
        !matches!(self, DgpKind::Confounded)
    }

    fn label(self) -> &'static str {
        match self {
            DgpKind::ConstantEffect => "constant_effect",
            DgpKind::LinearTau => "linear_tau",
            DgpKind::Goldilocks => "goldilocks",
            DgpKind::Confounded => "confounded",
            DgpKind::UnbalancedArms => "unbalanced_arms",
            DgpKind::ClusteredSchool => "clustered_school",
        }
    }
}

impl fmt::Display for DgpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DgpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DgpKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::Spec(format!("unknown data-generating process `{s}`")))
    }
}

fn d_default() -> usize {
    5
}
fn noise_default() -> f64 {
    1.0
}
fn clusters_default() -> usize {
    40
}
fn effect_default() -> f64 {
    0.25
}
fn propensity_default() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawDgpSpec")]
pub struct DgpSpec {
    pub kind: DgpKind,
    pub n: usize,
    pub d: usize,
    pub noise_sd: f64,
    pub n_clusters: usize,
    pub cluster_sd: f64,
    /// Effect level for `constant_effect` and `linear_tau`.
    pub effect: f64,
    /// Treatment probability for the randomized processes other than
    /// `unbalanced_arms`.
    pub propensity: f64,
    /// Achievement level at which the `goldilocks` effect peaks.
    pub midpoint: f64,
    pub seed: u64,
}

/// Serialized form: omitted fields take the per-kind defaults of
/// [`DgpSpec::new`].
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDgpSpec {
    kind: DgpKind,
    n: usize,
    d: Option<usize>,
    noise_sd: Option<f64>,
    n_clusters: Option<usize>,
    cluster_sd: Option<f64>,
    effect: Option<f64>,
    propensity: Option<f64>,
    midpoint: Option<f64>,
    seed: Option<u64>,
}

impl From<RawDgpSpec> for DgpSpec {
    fn from(r: RawDgpSpec) -> Self {
        let base = DgpSpec::new(r.kind, r.n);
        DgpSpec {
            d: r.d.unwrap_or(base.d),
            noise_sd: r.noise_sd.unwrap_or(base.noise_sd),
            n_clusters: r.n_clusters.unwrap_or(base.n_clusters),
            cluster_sd: r.cluster_sd.unwrap_or(base.cluster_sd),
            effect: r.effect.unwrap_or(base.effect),
            propensity: r.propensity.unwrap_or(base.propensity),
            midpoint: r.midpoint.unwrap_or(base.midpoint),
            seed: r.seed.unwrap_or(base.seed),
            ..base
        }
    }
}

impl DgpSpec {
    pub fn new(kind: DgpKind, n: usize) -> Self {
        DgpSpec {
            kind,
            n,
            d: d_default(),
            noise_sd: noise_default(),
            n_clusters: clusters_default(),
            cluster_sd: 0.0,
            effect: effect_default(),
            propensity: if kind == DgpKind::ClusteredSchool { 0.33 } else { propensity_default() },
            midpoint: 0.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_noise(mut self, noise_sd: f64) -> Self {
        self.noise_sd = noise_sd;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.n < 2 {
            return bad(format!("n = {} must be at least 2", self.n));
        }
        if self.d < 2 {
            return bad(format!("d = {} must be at least 2", self.d));
        }
        if !(self.noise_sd >= 0.0) || !(self.cluster_sd >= 0.0) {
            return bad("noise standard deviations must be non-negative".into());
        }
        if self.n_clusters == 0 {
            return bad("at least one cluster is required".into());
        }
        if !(self.propensity > 0.0 && self.propensity < 1.0) {
            return bad(format!("propensity {} must lie in (0, 1)", self.propensity));
        }
        if !self.effect.is_finite() || !self.midpoint.is_finite() {
            return bad("effect and midpoint must be finite".into());
        }
        Ok(())
    }

    pub fn truth(&self) -> Truth {
        Truth { spec: self.clone() }
    }
}

/// Covariates of one unit as seen by the true surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub x: Vec<f64>,
    pub achievement: f64,
    pub urbanicity: u8,
}

/// The true surfaces of a process.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    spec: DgpSpec,
}

impl Truth {
    pub fn kind(&self) -> DgpKind {
        self.spec.kind
    }

    pub fn mu0(&self, c: &Covariates) -> f64 {
        let x = &c.x;
        match self.spec.kind {
            DgpKind::UnbalancedArms => 2.0 * (PI * x[0]).sin() + x[1] * x[1],
            DgpKind::Goldilocks | DgpKind::ClusteredSchool => x[0] + 0.5 * c.achievement,
            _ => x[0] + 0.5 * x[1],
        }
    }

    pub fn tau(&self, c: &Covariates) -> f64 {
        let s = &self.spec;
        match s.kind {
            DgpKind::ConstantEffect => s.effect,
            DgpKind::LinearTau => s.effect + 0.5 * c.x[0],
            DgpKind::Goldilocks => 0.4 - 0.3 * (c.achievement - s.midpoint).powi(2),
            DgpKind::Confounded => 0.25 + 0.1 * c.x[1],
            DgpKind::UnbalancedArms => 1.0 + c.x[0],
            DgpKind::ClusteredSchool => {
                if c.urbanicity == 3 {
                    0.16
                } else {
                    0.28
                }
            }
        }
    }

    pub fn mu1(&self, c: &Covariates) -> f64 {
        self.mu0(c) + self.tau(c)
    }

    pub fn e(&self, c: &Covariates) -> f64 {
        match self.spec.kind {
            DgpKind::Confounded => 0.15 + 0.155 * (c.x[0] + 1.0),
            DgpKind::UnbalancedArms => 0.05,
            _ => self.spec.propensity,
        }
    }

    /// Read the covariates of `row` from a table produced by [`generate`].
    pub fn covariates(&self, table: &FeatureTable, row: usize) -> Result<Covariates> {
        let num = |name: &str| -> Result<f64> {
            table.column(name)?.numeric_value(row).ok_or_else(|| Error::Shape(format!("`{name}` is not numeric")))
        };
        let x = (1..=self.spec.d).map(|j| num(&format!("x{j}"))).collect::<Result<Vec<_>>>()?;
        let achievement = match self.spec.kind {
            DgpKind::Goldilocks | DgpKind::ClusteredSchool => num("achievement")?,
            _ => 0.0,
        };
        let urbanicity = match self.spec.kind {
            DgpKind::ClusteredSchool => table
                .column("urbanicity")?
                .text_value(row)
                .parse()
                .map_err(|_| Error::Shape("urbanicity must be an integer level".into()))?,
            _ => 0,
        };
        Ok(Covariates { x, achievement, urbanicity })
    }

    pub fn tau_table(&self, table: &FeatureTable) -> Result<Vec<f64>> {
        (0..table.n_rows()).map(|i| Ok(self.tau(&self.covariates(table, i)?))).collect()
    }

    pub fn e_table(&self, table: &FeatureTable) -> Result<Vec<f64>> {
        (0..table.n_rows()).map(|i| Ok(self.e(&self.covariates(table, i)?))).collect()
    }
}

/// A generated dataset with its potential outcomes and true surfaces at the
/// sampled units.
#[derive(Debug, Clone)]
pub struct Sample {
    pub dataset: Dataset,
    pub truth: Truth,
    pub tau: Vec<f64>,
    pub e: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

impl Sample {
    /// Realized sample-average treatment effect, `mean(y1 - y0)`.
    pub fn sate(&self) -> f64 {
        stats::mean(&self.y1.iter().zip(&self.y0).map(|(a, b)| a - b).collect::<Vec<_>>())
    }

    pub fn mean_tau(&self) -> f64 {
        stats::mean(&self.tau)
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Sample> {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Ok(Sample {
            dataset: self.dataset.subset(rows)?,
            truth: self.truth.clone(),
            tau: pick(&self.tau),
            e: pick(&self.e),
            mu0: pick(&self.mu0),
            mu1: pick(&self.mu1),
            y0: pick(&self.y0),
            y1: pick(&self.y1),
        })
    }
}

pub fn generate(spec: &DgpSpec) -> Result<Sample> {
    spec.validate()?;
    let truth = spec.truth();
    let n = spec.n;
    let width = (n - 1).to_string().len();
    let mut r_school = rng(derive_seed(spec.seed, 0));
    let achievement: Vec<f64> = (0..spec.n_clusters).map(|_| r_school.random_range(-1.0..1.0)).collect();
    let urbanicity: Vec<u8> = (0..spec.n_clusters).map(|_| r_school.random_range(1..=4u8)).collect();
    let school_sd = Normal::new(0.0, spec.cluster_sd).map_err(|e| Error::Spec(e.to_string()))?;
    let school_effect: Vec<f64> = (0..spec.n_clusters).map(|_| school_sd.sample(&mut r_school)).collect();

    let mut r = rng(derive_seed(spec.seed, 1));
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::Spec(e.to_string()))?;
    let mut xs = vec![Vec::with_capacity(n); spec.d];
    let mut school = Vec::with_capacity(n);
    let (mut tau, mut e, mut mu0, mut mu1) = (vec![], vec![], vec![], vec![]);
    let (mut y0, mut y1, mut z, mut y) = (vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let s = r.random_range(0..spec.n_clusters);
        let x: Vec<f64> = (0..spec.d).map(|_| r.random_range(-1.0..1.0)).collect();
        let c = Covariates { x, achievement: achievement[s], urbanicity: urbanicity[s] };
        let (m0, t, p) = (truth.mu0(&c), truth.tau(&c), truth.e(&c));
        let eps = noise.sample(&mut r) + school_effect[s];
        let zi = u8::from(r.random_bool(p));
        for (col, v) in xs.iter_mut().zip(&c.x) {
            col.push(*v);
        }
        school.push(s);
        y0.push(m0 + eps);
        y1.push(m0 + t + eps);
        y.push(if zi == 1 { m0 + t + eps } else { m0 + eps });
        z.push(zi);
        tau.push(t);
        e.push(p);
        mu0.push(m0);
        mu1.push(m0 + t);
    }

    let mut columns: Vec<Column> =
        xs.into_iter().enumerate().map(|(j, v)| Column::continuous(format!("x{}", j + 1), v)).collect();
    if matches!(spec.kind, DgpKind::Goldilocks | DgpKind::ClusteredSchool) {
        columns.push(Column::continuous("achievement", school.iter().map(|&s| achievement[s]).collect()));
    }
    if spec.kind == DgpKind::ClusteredSchool {
        columns.push(Column::categorical("urbanicity", school.iter().map(|&s| urbanicity[s].to_string()).collect()));
    }
    let cw = (spec.n_clusters - 1).to_string().len();
    let table = FeatureTable::new(
        (0..n).map(|i| format!("u{i:0width$}")).collect(),
        columns,
        Some(school.iter().map(|&s| Some(format!("s{s:0cw$}"))).collect()),
    )?;
    let dataset = Dataset::new(table, z, y).map_err(|e| Error::Spec(format!("generated data unusable: {e}")))?;
    Ok(Sample { dataset, truth, tau, e, mu0, mu1, y0, y1 })
}

/// Generate `n_train + n_test` units from one draw of the process (so both
/// parts share schools) and split them in order.
pub fn generate_split(spec: &DgpSpec, n_test: usize) -> Result<(Sample, Sample)> {
    let n_train = spec.n;
    let mut all = spec.clone();
    all.n = n_train + n_test;
    let s = generate(&all)?;
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..all.n).collect();
    Ok((s.subset(&train)?, s.subset(&test)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rmse,
    Bias,
    /// Share of units where the estimate has the sign of the truth, with
    /// zero counted as positive.
    SignCoverage,
}

pub fn score(estimates: &[f64], truth: &[f64], metric: Metric) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(Error::Shape(format!("{} estimates for {} true values", estimates.len(), truth.len())));
    }
    if estimates.is_empty() {
        return Err(Error::Shape("nothing to score".into()));
    }
    let n = estimates.len() as f64;
    let pairs = estimates.iter().zip(truth);
    Ok(match metric {
        Metric::Rmse => (pairs.map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt(),
        Metric::Bias => pairs.map(|(a, b)| a - b).sum::<f64>() / n,
        Metric::SignCoverage => pairs.filter(|(a, b)| (**a >= 0.0) == (**b >= 0.0)).count() as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_effect_treated_fraction() {
        let spec = DgpSpec { propensity: 0.33, noise_sd: 0.0, ..DgpSpec::new(DgpKind::ConstantEffect, 10_000) };
        let s = generate(&spec).unwrap();
        assert!(s.tau.iter().all(|&t| t == 0.25));
        let frac = s.dataset.treated_rows().len() as f64 / 10_000.0;
        assert!((frac - 0.33).abs() < 0.02, "{frac}");
    }

    #[test]
    fn goldilocks_peaks_at_midpoint() {
        let spec = DgpSpec { midpoint: 0.2, ..DgpSpec::new(DgpKind::Goldilocks, 10) };
        let t = spec.truth();
        let at = |a: f64| t.tau(&Covariates { x: vec![0.0; 5], achievement: a, urbanicity: 0 });
        for a in [-1.0, -0.5, 0.0, 0.19, 0.21, 0.6, 1.0] {
            assert!(at(0.2) > at(a));
        }
    }

    #[test]
    fn confounding_correlates_treatment_with_x1() {
        let s = generate(&DgpSpec::new(DgpKind::Confounded, 10_000).with_seed(3)).unwrap();
        let z: Vec<f64> = s.dataset.treatment().iter().map(|&v| f64::from(v)).collect();
        let x1 = s.dataset.table().column("x1").unwrap().as_continuous().unwrap().to_vec();
        assert!(stats::pearson(&z, &x1) > 0.0);
        assert!(s.e.iter().all(|&e| (0.15..=0.46).contains(&e)));
    }

    #[test]
    fn noiseless_potential_outcomes_match_tau() {
        for kind in DgpKind::ALL {
            let s = generate(&DgpSpec { cluster_sd: 0.3, ..DgpSpec::new(kind, 5_000).with_noise(0.0) }).unwrap();
            assert!((s.sate() - s.mean_tau()).abs() < 1e-6, "{kind}");
        }
    }

    #[test]
    fn truth_reads_back_from_table() {
        for kind in DgpKind::ALL {
            let s = generate(&DgpSpec::new(kind, 200).with_seed(1)).unwrap();
            assert_eq!(s.truth.tau_table(s.dataset.table()).unwrap(), s.tau, "{kind}");
            assert_eq!(s.truth.e_table(s.dataset.table()).unwrap(), s.e, "{kind}");
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = DgpSpec::new(DgpKind::ClusteredSchool, 300).with_seed(5);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.dataset, b.dataset);
    }

    #[test]
    fn invalid_specs() {
        assert!(matches!(generate(&DgpSpec::new(DgpKind::LinearTau, 1)), Err(Error::Spec(_))));
        assert!(matches!(generate(&DgpSpec::new(DgpKind::LinearTau, 10).with_noise(-1.0)), Err(Error::Spec(_))));
        assert!(matches!("nope".parse::<DgpKind>(), Err(Error::Spec(_))));
        assert_eq!("linear_tau".parse::<DgpKind>().unwrap(), DgpKind::LinearTau);
    }

    #[test]
    fn scores() {
        let t = [0.0, 1.0, -2.0];
        assert_eq!(score(&t, &t, Metric::Rmse).unwrap(), 0.0);
        let shifted: Vec<f64> = t.iter().map(|v| v + 1.0).collect();
        assert_eq!(score(&shifted, &t, Metric::Bias).unwrap(), 1.0);
        assert_eq!(score(&shifted, &t, Metric::Rmse).unwrap(), 1.0);
        assert_eq!(score(&[0.0], &[-0.0], Metric::SignCoverage).unwrap(), 1.0);
        assert!(matches!(score(&[1.0], &t, Metric::Rmse), Err(Error::Shape(_))));
    }

    #[test]
    fn split_shares_schools() {
        let (a, b) = generate_split(&DgpSpec::new(DgpKind::LinearTau, 400).with_seed(2), 100).unwrap();
        assert_eq!((a.dataset.n_rows(), b.dataset.n_rows()), (400, 100));
        let schools = |s: &Sample| {
            s.dataset.table().clusters().unwrap().iter().flatten().cloned().collect::<std::collections::BTreeSet<_>>()
        };
        assert!(schools(&b).is_subset(&schools(&a)));
    }
}
