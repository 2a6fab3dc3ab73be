//! Fit a registry of CATE estimators, collect their per-unit estimates into
//! one matrix, and summarise how much they agree.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::base_learners::{CrossFitPlan, LearnerSpec};
use crate::causal_forest::{fit_causal_forest, CausalForestSpec};
use crate::data::{Dataset, FeatureTable};
use crate::error::{Error, Result};
use crate::meta_learners::{estimator_name, fit_mo, fit_r, fit_s, fit_t, fit_x, CateKind, CateModel};
use crate::nuisance::{fit_nuisance, NuisanceConfig, NuisanceModels};
use crate::seeding::{derive_seed, name_hash, par_map};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorEntry {
    pub kind: CateKind,
    /// Base learner; ignored by the causal forest, which uses the suite's
    /// forest settings.
    pub base: LearnerSpec,
    pub with_cluster: bool,
}

impl EstimatorEntry {
    pub fn new(kind: CateKind, base: LearnerSpec, with_cluster: bool) -> Self {
        EstimatorEntry { kind, base, with_cluster }
    }

    pub fn name(&self) -> String {
        let base = if self.kind == CateKind::CF { "forest" } else { self.base.family() };
        estimator_name(self.kind, base, self.with_cluster)
    }
}

fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub estimators: Vec<EstimatorEntry>,
    pub nuisance: NuisanceConfig,
    #[serde(default = "default_folds")]
    pub crossfit_folds: usize,
    /// Use held-out nuisance values for the X- and MO-learners; the
    /// R-learner always cross-fits.
    #[serde(default)]
    pub crossfit_nuisance: bool,
    #[serde(default)]
    pub causal_forest: CausalForestSpec,
    #[serde(default)]
    pub seed: u64,
}

impl SuiteSpec {
    /// `{S, T, X, MO, R} x {forest, gbt}` plus the causal forest, each fit
    /// with and without the cluster indicator: 22 estimators.
    pub fn default_suite(forest: LearnerSpec, gbt: LearnerSpec, nuisance: NuisanceConfig) -> Self {
        let mut estimators = Vec::new();
        for kind in [CateKind::S, CateKind::T, CateKind::X, CateKind::MO, CateKind::R] {
            for base in [&forest, &gbt] {
                for with_cluster in [true, false] {
                    estimators.push(EstimatorEntry::new(kind, base.clone(), with_cluster));
                }
            }
        }
        for with_cluster in [true, false] {
            estimators.push(EstimatorEntry::new(CateKind::CF, forest.clone(), with_cluster));
        }
        SuiteSpec {
            estimators,
            nuisance,
            crossfit_folds: default_folds(),
            crossfit_nuisance: false,
            causal_forest: CausalForestSpec::default(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn names(&self) -> Vec<String> {
        self.estimators.iter().map(EstimatorEntry::name).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.estimators.is_empty() {
            return Err(Error::Suite("the estimator suite is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for name in self.names() {
            if !seen.insert(name.clone()) {
                return Err(Error::Suite(format!("duplicate estimator name `{name}`")));
            }
        }
        for e in &self.estimators {
            e.base.validate()?;
        }
        if self.crossfit_folds < 2 {
            return Err(Error::Config("cross-fitting needs at least 2 folds".into()));
        }
        self.nuisance.outcome.validate()?;
        self.nuisance.propensity.validate()?;
        self.nuisance.clip.validate()?;
        self.causal_forest.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorFailure {
    pub name: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct FittedSuite {
    pub models: Vec<CateModel>,
    pub failures: Vec<EstimatorFailure>,
}

fn shared_err(e: &Error) -> Error {
    Error::Fit(format!("shared fit failed: {e}"))
}

struct SharedFits {
    plan: Result<CrossFitPlan>,
    nuisance: [Option<Result<NuisanceModels>>; 2],
}

fn shared_fits(ds: &Dataset, suite: &SuiteSpec) -> SharedFits {
    let plan = CrossFitPlan::new(ds.table(), suite.crossfit_folds, derive_seed(suite.seed, name_hash("crossfit")));
    let needs = |flag: bool| {
        suite.estimators.iter().any(|e| e.with_cluster == flag && matches!(e.kind, CateKind::X | CateKind::MO))
    };
    let fits = par_map(2, |k| {
        let flag = k == 1;
        if !needs(flag) {
            return None;
        }
        let stream = name_hash(if flag { "nuisance_cluster" } else { "nuisance_nocluster" });
        let mut cfg = suite.nuisance.clone();
        cfg.outcome.seed = derive_seed(suite.seed, stream);
        cfg.propensity.seed = derive_seed(suite.seed, stream.wrapping_add(1));
        if !suite.crossfit_nuisance {
            return Some(fit_nuisance(ds, &cfg, flag, None));
        }
        Some(plan.as_ref().map_err(shared_err).and_then(|p| fit_nuisance(ds, &cfg, flag, Some(p))))
    });
    let mut it = fits.into_iter();
    SharedFits { plan, nuisance: [it.next().flatten(), it.next().flatten()] }
}

fn fit_entry(ds: &Dataset, suite: &SuiteSpec, shared: &SharedFits, e: &EstimatorEntry) -> Result<CateModel> {
    let seed = derive_seed(suite.seed, name_hash(&e.name()));
    let base = e.base.clone().with_seed(seed);
    let nuisance = || -> Result<&NuisanceModels> {
        match &shared.nuisance[usize::from(e.with_cluster)] {
            Some(Ok(nm)) => Ok(nm),
            Some(Err(err)) => Err(shared_err(err)),
            None => Err(Error::Fit("nuisance models were not fitted".into())),
        }
    };
    match e.kind {
        CateKind::S => fit_s(ds, &base, e.with_cluster),
        CateKind::T => fit_t(ds, &base, e.with_cluster),
        CateKind::X => fit_x(ds, &base, nuisance()?),
        CateKind::MO => fit_mo(ds, &base, nuisance()?),
        CateKind::R => {
            let plan = shared.plan.as_ref().map_err(shared_err)?;
            let mut cfg = suite.nuisance.clone();
            cfg.outcome.seed = derive_seed(seed, 1);
            cfg.propensity.seed = derive_seed(seed, 2);
            fit_r(ds, &base, &cfg, plan, e.with_cluster)
        }
        CateKind::CF => fit_causal_forest(ds, &suite.causal_forest.clone().with_seed(seed), e.with_cluster),
    }
}

/// Fit every estimator of the suite on `ds`. Individual failures are
/// recorded rather than propagated.
pub fn fit_suite(ds: &Dataset, suite: &SuiteSpec) -> Result<FittedSuite> {
    suite.validate()?;
    let shared = shared_fits(ds, suite);
    let results = par_map(suite.estimators.len(), |k| fit_entry(ds, suite, &shared, &suite.estimators[k]));
    let mut models = Vec::new();
    let mut failures = Vec::new();
    for (e, r) in suite.estimators.iter().zip(results) {
        match r {
            Ok(m) => models.push(m),
            Err(err) => {
                log::warn!("estimator {} failed: {err}", e.name());
                failures.push(EstimatorFailure { name: e.name(), message: err.to_string() });
            }
        }
    }
    if models.is_empty() {
        return Err(Error::Suite("every estimator in the suite failed".into()));
    }
    Ok(FittedSuite { models, failures })
}

/// Units by estimators table of CATE estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateMatrix {
    unit_ids: Vec<String>,
    names: Vec<String>,
    /// Row-major, one row per unit.
    values: Vec<Vec<f64>>,
}

impl EstimateMatrix {
    pub fn new(unit_ids: Vec<String>, names: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if values.len() != unit_ids.len() || values.iter().any(|r| r.len() != names.len()) {
            return Err(Error::Shape("estimate matrix dimensions disagree".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Shape("estimate matrix entries must be finite".into()));
        }
        Ok(EstimateMatrix { unit_ids, names, values })
    }

    /// Build from estimator columns.
    pub fn from_columns(unit_ids: Vec<String>, columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n = unit_ids.len();
        if columns.iter().any(|(_, c)| c.len() != n) {
            return Err(Error::Shape("estimate column length differs from unit count".into()));
        }
        let values = (0..n).map(|i| columns.iter().map(|(_, c)| c[i]).collect()).collect();
        let names = columns.into_iter().map(|(n, _)| n).collect();
        Self::new(unit_ids, names, values)
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_estimators(&self) -> usize {
        self.names.len()
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Name(format!("no estimator named `{name}`")))?;
        Ok(self.values.iter().map(|r| r[j]).collect())
    }

    /// Per-unit minimum: the most pessimistic estimate.
    pub fn worst_case(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub matrix: EstimateMatrix,
    pub failures: Vec<EstimatorFailure>,
    pub models: Vec<CateModel>,
}

/// Evaluate fitted models on `query`; models that cannot be evaluated are
/// dropped and recorded.
pub fn evaluate_suite(fitted: FittedSuite, query: &FeatureTable) -> Result<SuiteRun> {
    let mut failures = fitted.failures;
    let preds = par_map(fitted.models.len(), |k| fitted.models[k].predict_cate(query));
    let mut columns = Vec::new();
    let mut models = Vec::new();
    for (m, p) in fitted.models.into_iter().zip(preds) {
        match p {
            Ok(v) if v.iter().all(|x| x.is_finite()) => {
                columns.push((m.name(), v));
                models.push(m);
            }
            Ok(_) => failures.push(EstimatorFailure { name: m.name(), message: "non-finite estimates".into() }),
            Err(err) => failures.push(EstimatorFailure { name: m.name(), message: err.to_string() }),
        }
    }
    if columns.is_empty() {
        return Err(Error::Suite("no estimator produced estimates".into()));
    }
    let matrix = EstimateMatrix::from_columns(query.unit_ids().to_vec(), columns)?;
    Ok(SuiteRun { matrix, failures, models })
}

pub fn run_suite(ds: &Dataset, suite: &SuiteSpec, query: &FeatureTable) -> Result<SuiteRun> {
    evaluate_suite(fit_suite(ds, suite)?, query)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitStability {
    pub unit_id: String,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub spread: f64,
    pub sd: f64,
    /// Share of estimates whose sign matches the sign of the row median.
    pub sign_agreement: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub n_units: usize,
    pub n_estimators: usize,
    pub spread_threshold: f64,
    pub n_stable: usize,
    pub mean_spread: f64,
    pub median_spread: f64,
    pub max_spread: f64,
    pub mean_sign_agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub units: Vec<UnitStability>,
    pub summary: StabilitySummary,
}

fn sign_agreement(row: &[f64], median: f64) -> f64 {
    let n = row.len() as f64;
    let pos = row.iter().filter(|&&v| v > 0.0).count() as f64 / n;
    let neg = row.iter().filter(|&&v| v < 0.0).count() as f64 / n;
    if median > 0.0 {
        pos
    } else if median < 0.0 {
        neg
    } else {
        pos.max(neg).max(1.0 - pos - neg)
    }
}

/// Row statistics of the estimate matrix. Rows with spread at or below
/// `threshold` are flagged stable; the default threshold is the median row
/// spread.
pub fn stability_report(m: &EstimateMatrix, threshold: Option<f64>) -> Result<StabilityReport> {
    if m.n_estimators() < 2 {
        return Err(Error::Report("agreement needs at least two estimators".into()));
    }
    if m.n_units() == 0 {
        return Err(Error::Report("estimate matrix has no units".into()));
    }
    let mut units: Vec<UnitStability> = m
        .rows()
        .iter()
        .zip(m.unit_ids())
        .map(|(row, id)| {
            let sorted = stats::sorted_copy(row);
            let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
            let median = stats::quantile_sorted(&sorted, 0.5);
            UnitStability {
                unit_id: id.clone(),
                min,
                median,
                max,
                spread: max - min,
                sd: stats::sample_sd(&sorted),
                sign_agreement: sign_agreement(row, median),
                stable: false,
            }
        })
        .collect();
    let spreads: Vec<f64> = units.iter().map(|u| u.spread).collect();
    let median_spread = stats::median(&spreads);
    let thr = threshold.unwrap_or(median_spread);
    for u in &mut units {
        u.stable = u.spread <= thr;
    }
    let summary = StabilitySummary {
        n_units: units.len(),
        n_estimators: m.n_estimators(),
        spread_threshold: thr,
        n_stable: units.iter().filter(|u| u.stable).count(),
        mean_spread: stats::mean(&spreads),
        median_spread,
        max_spread: spreads.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_sign_agreement: stats::mean(&units.iter().map(|u| u.sign_agreement).collect::<Vec<_>>()),
    };
    Ok(StabilityReport { units, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeMode {
    Pessimistic,
    Optimistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Treat,
    Withhold,
    Abstain,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Treat => "treat",
            Decision::Withhold => "withhold",
            Decision::Abstain => "abstain",
        })
    }
}

/// Decide from one row of estimates. Pessimistic: treat when even the
/// smallest estimate clears `threshold`, withhold when none does, abstain
/// when the estimators straddle it. Optimistic: treat when any estimate
/// clears it.
pub fn envelope_decision(row: &[f64], mode: EnvelopeMode, threshold: f64) -> Decision {
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match mode {
        EnvelopeMode::Pessimistic if min > threshold => Decision::Treat,
        EnvelopeMode::Pessimistic if max <= threshold => Decision::Withhold,
        EnvelopeMode::Pessimistic => Decision::Abstain,
        EnvelopeMode::Optimistic if max > threshold => Decision::Treat,
        EnvelopeMode::Optimistic => Decision::Withhold,
    }
}

pub fn envelope_policy(m: &EstimateMatrix, mode: EnvelopeMode, threshold: f64) -> Vec<Decision> {
    m.rows().iter().map(|r| envelope_decision(r, mode, threshold)).collect()
}
