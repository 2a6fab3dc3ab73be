//! S-, T-, X-, MO- and R-learners over the base-learner abstraction, and
//! the uniform [`CateModel`] they (and the causal forest) produce.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::base_learners::{cross_fit_predict, fit, CrossFitPlan, FittedModel, LearnerSpec};
use crate::causal_forest::CausalForest;
use crate::data::{Dataset, EncodingPlan, FeatureTable};
use crate::error::{Error, Result};
use crate::nuisance::{Clip, NuisanceConfig, NuisanceModels};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CateKind {
    S,
    T,
    X,
    MO,
    R,
    CF,
}

impl fmt::Display for CateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CateKind::S => "S",
            CateKind::T => "T",
            CateKind::X => "X",
            CateKind::MO => "MO",
            CateKind::R => "R",
            CateKind::CF => "CF",
        };
        f.write_str(s)
    }
}

impl FromStr for CateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "S" => CateKind::S,
            "T" => CateKind::T,
            "X" => CateKind::X,
            "MO" => CateKind::MO,
            "R" => CateKind::R,
            "CF" => CateKind::CF,
            other => return Err(Error::Config(format!("unknown estimator kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) enum CateParts {
    S { mu: FittedModel },
    T { mu0: FittedModel, mu1: FittedModel },
    X { tau0: FittedModel, tau1: FittedModel, e: FittedModel, clip: Clip },
    /// Direct regression of a pseudo-outcome (MO and R).
    Direct { tau: FittedModel },
    Forest(CausalForest),
}

/// A fitted CATE estimator: maps covariates to `tau_hat(x)`.
#[derive(Debug, Clone)]
pub struct CateModel {
    kind: CateKind,
    base: String,
    plan: EncodingPlan,
    parts: CateParts,
    training_units: Arc<[String]>,
}

impl CateModel {
    pub(crate) fn new(kind: CateKind, base: &str, plan: EncodingPlan, parts: CateParts, ds: Option<&Dataset>) -> Self {
        CateModel {
            kind,
            base: base.to_string(),
            plan,
            parts,
            training_units: ds.map(|d| d.unit_ids().to_vec().into()).unwrap_or_else(|| Vec::new().into()),
        }
    }

    /// T-learner from known outcome surfaces.
    pub fn t_from_models(plan: EncodingPlan, mu0: FittedModel, mu1: FittedModel) -> Self {
        Self::new(CateKind::T, mu0.family(), plan, CateParts::T { mu0, mu1 }, None)
    }

    /// S-learner from a known joint surface; the treatment indicator is the
    /// last encoded column.
    pub fn s_from_model(plan: EncodingPlan, mu: FittedModel) -> Self {
        Self::new(CateKind::S, mu.family(), plan, CateParts::S { mu }, None)
    }

    /// X-learner from known second-stage effect surfaces and propensity.
    pub fn x_from_models(plan: EncodingPlan, tau0: FittedModel, tau1: FittedModel, e: FittedModel, clip: Clip) -> Self {
        Self::new(CateKind::X, tau0.family(), plan, CateParts::X { tau0, tau1, e, clip }, None)
    }

    pub fn kind(&self) -> CateKind {
        self.kind
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn with_cluster(&self) -> bool {
        self.plan.includes_cluster()
    }

    pub fn plan(&self) -> &EncodingPlan {
        &self.plan
    }

    /// Canonical `<kind>_<base>_<cluster|nocluster>` name.
    pub fn name(&self) -> String {
        estimator_name(self.kind, &self.base, self.with_cluster())
    }

    /// Unit ids of every row this model (or any of its constituents) was
    /// trained on.
    pub fn training_units(&self) -> &[String] {
        &self.training_units
    }

    pub fn predict_cate(&self, table: &FeatureTable) -> Result<Vec<f64>> {
        let x = self.plan.apply(table)?;
        self.predict_encoded(&x)
    }

    pub fn predict_encoded(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.plan.n_columns() {
            return Err(Error::Shape(format!("expected {} encoded columns, got {}", self.plan.n_columns(), x.ncols())));
        }
        let out = match &self.parts {
            CateParts::T { mu0, mu1 } => {
                let a = mu1.predict(x.view())?;
                let b = mu0.predict(x.view())?;
                a.iter().zip(&b).map(|(p, q)| p - q).collect()
            }
            CateParts::S { mu } => {
                let a = mu.predict(with_treatment_column(x, 1.0).view())?;
                let b = mu.predict(with_treatment_column(x, 0.0).view())?;
                a.iter().zip(&b).map(|(p, q)| p - q).collect()
            }
            CateParts::X { tau0, tau1, e, clip } => {
                let t0 = tau0.predict(x.view())?;
                let t1 = tau1.predict(x.view())?;
                let ev = e.predict(x.view())?;
                (0..x.nrows()).map(|i| x_combine(clip.apply(ev[i]), t0[i], t1[i])).collect()
            }
            CateParts::Direct { tau } => tau.predict(x.view())?,
            CateParts::Forest(f) => f.predict(x.view()),
        };
        Ok(out)
    }
}

pub fn estimator_name(kind: CateKind, base: &str, with_cluster: bool) -> String {
    format!("{kind}_{base}_{}", if with_cluster { "cluster" } else { "nocluster" })
}

fn with_treatment_column(x: &Array2<f64>, z: f64) -> Array2<f64> {
    let mut out = Array2::from_elem((x.nrows(), x.ncols() + 1), z);
    out.slice_mut(s![.., ..x.ncols()]).assign(x);
    out
}

fn child(spec: &LearnerSpec, stream: u64) -> LearnerSpec {
    spec.clone().with_seed(derive_seed(spec.seed, stream))
}

fn arm_rows(ds: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let c = ds.control_rows();
    let t = ds.treated_rows();
    if c.is_empty() || t.is_empty() {
        return Err(Error::Fit("both treatment arms must be non-empty".into()));
    }
    Ok((c, t))
}

fn fit_rows(spec: &LearnerSpec, x: &Array2<f64>, target: &[f64], rows: &[usize], w: Option<&[f64]>) -> Result<FittedModel> {
    let xs = x.select(Axis(0), rows);
    let ys: Vec<f64> = rows.iter().map(|&i| target[i]).collect();
    let ws: Option<Vec<f64>> = w.map(|w| rows.iter().map(|&i| w[i]).collect());
    fit(spec, xs.view(), &ys, ws.as_deref())
}

/// Source of a pseudo-outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PseudoKind {
    ModifiedOutcome,
    ImputedTreated,
    ImputedControl,
    ResidualRatio,
}

/// Per-row regression target and weight for a second-stage fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOutcome {
    pub kind: PseudoKind,
    pub target: Vec<f64>,
    pub weight: Vec<f64>,
}

/// Adjusted modified outcome
/// `(z - e) / (e (1 - e)) * (y - mu1 (1 - e) - mu0 e)`.
pub fn mo_pseudo_outcome(z: u8, y: f64, e: f64, mu0: f64, mu1: f64) -> f64 {
    let zf = f64::from(z);
    (zf - e) / (e * (1.0 - e)) * (y - mu1 * (1.0 - e) - mu0 * e)
}

/// Imputed effect for a treated unit, `y - mu0(x)`.
pub fn imputed_treated(y: f64, mu0: f64) -> f64 {
    y - mu0
}

/// Imputed effect for a control unit, `mu1(x) - y`.
pub fn imputed_control(y: f64, mu1: f64) -> f64 {
    mu1 - y
}

/// X-learner combination `e * tau0 + (1 - e) * tau1`.
pub fn x_combine(e: f64, tau0: f64, tau1: f64) -> f64 {
    e * tau0 + (1.0 - e) * tau1
}

/// Rows whose treatment residual falls below this are given zero weight.
pub const R_MIN_RESIDUAL: f64 = 1e-6;

/// Residual-ratio target `(y - m) / (w - e)` with weight `(w - e)^2`.
pub fn r_pseudo_outcome(y: f64, m: f64, w: u8, e: f64) -> (f64, f64) {
    let r = f64::from(w) - e;
    if r.abs() < R_MIN_RESIDUAL {
        return (0.0, 0.0);
    }
    ((y - m) / r, r * r)
}

pub fn fit_t(ds: &Dataset, base: &LearnerSpec, include_cluster: bool) -> Result<CateModel> {
    let (c, t) = arm_rows(ds)?;
    let plan = EncodingPlan::fit(ds.table(), include_cluster)?;
    let x = plan.apply(ds.table())?;
    let mu0 = fit_rows(&child(base, 0), &x, ds.outcome(), &c, None)?;
    let mu1 = fit_rows(&child(base, 0), &x, ds.outcome(), &t, None)?;
    Ok(CateModel::new(CateKind::T, base.family(), plan, CateParts::T { mu0, mu1 }, Some(ds)))
}

pub fn fit_s(ds: &Dataset, base: &LearnerSpec, include_cluster: bool) -> Result<CateModel> {
    arm_rows(ds)?;
    let plan = EncodingPlan::fit(ds.table(), include_cluster)?;
    let x = plan.apply(ds.table())?;
    let mut xz = with_treatment_column(&x, 0.0);
    let last = x.ncols();
    for (i, &z) in ds.treatment().iter().enumerate() {
        xz[[i, last]] = f64::from(z);
    }
    let mu = fit(&child(base, 0), xz.view(), ds.outcome(), None)?;
    Ok(CateModel::new(CateKind::S, base.family(), plan, CateParts::S { mu }, Some(ds)))
}

pub fn mo_pseudo_outcomes(ds: &Dataset, nm: &NuisanceModels) -> Result<PseudoOutcome> {
    let v = nm.training_values(ds)?;
    let target = (0..ds.n_rows())
        .map(|i| mo_pseudo_outcome(ds.treatment()[i], ds.outcome()[i], v.e[i], v.mu0[i], v.mu1[i]))
        .collect();
    Ok(PseudoOutcome { kind: PseudoKind::ModifiedOutcome, target, weight: vec![1.0; ds.n_rows()] })
}

pub fn fit_mo(ds: &Dataset, base: &LearnerSpec, nm: &NuisanceModels) -> Result<CateModel> {
    arm_rows(ds)?;
    let x = nm.plan().apply(ds.table())?;
    let po = mo_pseudo_outcomes(ds, nm)?;
    let tau = fit(&child(base, 0), x.view(), &po.target, None)?;
    Ok(CateModel::new(CateKind::MO, base.family(), nm.plan().clone(), CateParts::Direct { tau }, Some(ds)))
}

pub fn fit_x(ds: &Dataset, base: &LearnerSpec, nm: &NuisanceModels) -> Result<CateModel> {
    let (c, t) = arm_rows(ds)?;
    let x = nm.plan().apply(ds.table())?;
    let v = nm.training_values(ds)?;
    let y = ds.outcome();
    let d: Vec<f64> = (0..ds.n_rows())
        .map(|i| if ds.treatment()[i] == 1 { imputed_treated(y[i], v.mu0[i]) } else { imputed_control(y[i], v.mu1[i]) })
        .collect();
    let tau1 = fit_rows(&child(base, 1), &x, &d, &t, None)?;
    let tau0 = fit_rows(&child(base, 0), &x, &d, &c, None)?;
    let parts = CateParts::X { tau0, tau1, e: nm.propensity_model().clone(), clip: nm.clip() };
    Ok(CateModel::new(CateKind::X, base.family(), nm.plan().clone(), parts, Some(ds)))
}

pub fn r_pseudo_outcomes(ds: &Dataset, m_hat: &[f64], e_hat: &[f64]) -> Result<PseudoOutcome> {
    if m_hat.len() != ds.n_rows() || e_hat.len() != ds.n_rows() {
        return Err(Error::Shape("held-out nuisance vectors must have one entry per row".into()));
    }
    let (target, weight) = (0..ds.n_rows())
        .map(|i| r_pseudo_outcome(ds.outcome()[i], m_hat[i], ds.treatment()[i], e_hat[i]))
        .unzip();
    Ok(PseudoOutcome { kind: PseudoKind::ResidualRatio, target, weight })
}

/// Final R-learner stage given held-out `m(x)` and `e(x)` for every row.
pub fn fit_r_from_residuals(
    ds: &Dataset,
    base: &LearnerSpec,
    include_cluster: bool,
    m_hat: &[f64],
    e_hat: &[f64],
) -> Result<CateModel> {
    let plan = EncodingPlan::fit(ds.table(), include_cluster)?;
    let x = plan.apply(ds.table())?;
    let po = r_pseudo_outcomes(ds, m_hat, e_hat)?;
    let dropped = po.weight.iter().filter(|&&w| w == 0.0).count();
    if dropped > 0 {
        log::warn!("R-learner: {dropped} rows with |w - e| < {R_MIN_RESIDUAL} get zero weight");
    }
    let tau = fit(&child(base, 0), x.view(), &po.target, Some(&po.weight))?;
    Ok(CateModel::new(CateKind::R, base.family(), plan, CateParts::Direct { tau }, Some(ds)))
}

/// R-learner: cross-fitted `m(x) = E[Y|X]` and `e(x)`, then a weighted
/// regression of the residual ratio on `x`. Regularisation comes from the
/// base learner's own complexity controls.
pub fn fit_r(
    ds: &Dataset,
    base: &LearnerSpec,
    nuisance: &NuisanceConfig,
    plan: &CrossFitPlan,
    include_cluster: bool,
) -> Result<CateModel> {
    arm_rows(ds)?;
    nuisance.clip.validate()?;
    if plan.n_rows() != ds.n_rows() {
        return Err(Error::Plan("cross-fit plan does not match the dataset".into()));
    }
    let enc = EncodingPlan::fit(ds.table(), include_cluster)?;
    let x = enc.apply(ds.table())?;
    let z: Vec<f64> = ds.treatment().iter().map(|&v| f64::from(v)).collect();
    let m_hat = cross_fit_predict(&child(&nuisance.outcome, 10), x.view(), ds.outcome(), None, plan)?;
    let e_raw = cross_fit_predict(&child(&nuisance.propensity, 11), x.view(), &z, None, plan)?;
    let e_hat: Vec<f64> = e_raw.iter().map(|&e| nuisance.clip.apply(e)).collect();
    fit_r_from_residuals(ds, base, include_cluster, &m_hat, &e_hat)
}
