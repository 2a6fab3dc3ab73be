//! Propensity score and arm-specific outcome surfaces shared by the
//! downstream estimators.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::base_learners::{fit, CrossFitPlan, FittedModel, LearnerSpec};
use crate::data::{Dataset, EncodingPlan, FeatureTable};
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, par_map};
use crate::stats;

/// Propensity clipping bounds, `0 < lo < hi < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub lo: f64,
    pub hi: f64,
}

impl Clip {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let c = Clip { lo, hi };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.lo < self.hi && self.hi < 1.0) {
            return Err(Error::Config(format!("clip bounds ({}, {}) must satisfy 0 < lo < hi < 1", self.lo, self.hi)));
        }
        Ok(())
    }

    pub fn apply(&self, e: f64) -> f64 {
        e.clamp(self.lo, self.hi)
    }
}

impl Default for Clip {
    fn default() -> Self {
        Clip { lo: 0.01, hi: 0.99 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceConfig {
    pub outcome: LearnerSpec,
    pub propensity: LearnerSpec,
    #[serde(default)]
    pub clip: Clip,
}

impl NuisanceConfig {
    pub fn new(outcome: LearnerSpec, propensity: LearnerSpec) -> Self {
        NuisanceConfig { outcome, propensity, clip: Clip::default() }
    }
}

/// Nuisance values at a set of units. `e` is clipped, `e_raw` is not.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceValues {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub e: Vec<f64>,
    pub e_raw: Vec<f64>,
}

#[derive(Debug, Clone)]
struct HeldOut {
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    e_raw: Vec<f64>,
}

/// Fitted `mu0` (controls only), `mu1` (treated only) and propensity `e`.
#[derive(Debug, Clone)]
pub struct NuisanceModels {
    plan: EncodingPlan,
    mu0: FittedModel,
    mu1: FittedModel,
    e: FittedModel,
    clip: Clip,
    held_out: Option<HeldOut>,
}

impl NuisanceModels {
    /// Assemble from already fitted (or known) functions of the encoded
    /// features.
    pub fn from_parts(plan: EncodingPlan, mu0: FittedModel, mu1: FittedModel, e: FittedModel, clip: Clip) -> Result<Self> {
        clip.validate()?;
        let k = plan.n_columns();
        if mu0.n_cols() != k || mu1.n_cols() != k || e.n_cols() != k {
            return Err(Error::Shape("nuisance models disagree with the encoding plan".into()));
        }
        Ok(NuisanceModels { plan, mu0, mu1, e, clip, held_out: None })
    }

    pub fn plan(&self) -> &EncodingPlan {
        &self.plan
    }

    pub fn clip(&self) -> Clip {
        self.clip
    }

    pub fn is_cross_fitted(&self) -> bool {
        self.held_out.is_some()
    }

    pub fn propensity_model(&self) -> &FittedModel {
        &self.e
    }

    pub fn predict_encoded(&self, x: &Array2<f64>) -> Result<NuisanceValues> {
        let e_raw = self.e.predict(x.view())?;
        Ok(NuisanceValues {
            mu0: self.mu0.predict(x.view())?,
            mu1: self.mu1.predict(x.view())?,
            e: e_raw.iter().map(|&v| self.clip.apply(v)).collect(),
            e_raw,
        })
    }

    pub fn predict(&self, table: &FeatureTable) -> Result<NuisanceValues> {
        self.predict_encoded(&self.plan.apply(table)?)
    }

    /// Values at the training units: held-out predictions when cross-fitted,
    /// in-sample predictions otherwise.
    pub fn training_values(&self, ds: &Dataset) -> Result<NuisanceValues> {
        match &self.held_out {
            Some(h) => {
                if h.mu0.len() != ds.n_rows() {
                    return Err(Error::Shape("dataset differs from the cross-fitted training data".into()));
                }
                Ok(NuisanceValues {
                    mu0: h.mu0.clone(),
                    mu1: h.mu1.clone(),
                    e: h.e_raw.iter().map(|&v| self.clip.apply(v)).collect(),
                    e_raw: h.e_raw.clone(),
                })
            }
            None => self.predict(ds.table()),
        }
    }
}

fn fit_arm_models(
    x: &Array2<f64>,
    ds: &Dataset,
    rows: &[usize],
    cfg: &NuisanceConfig,
    seed_stream: u64,
) -> Result<(FittedModel, FittedModel, FittedModel)> {
    let z = ds.treatment();
    let y = ds.outcome();
    let control: Vec<usize> = rows.iter().copied().filter(|&i| z[i] == 0).collect();
    let treated: Vec<usize> = rows.iter().copied().filter(|&i| z[i] == 1).collect();
    if control.is_empty() || treated.is_empty() {
        return Err(Error::Fit("both treatment arms must be non-empty".into()));
    }
    let pick = |idx: &[usize]| x.select(Axis(0), idx);
    let out = |idx: &[usize]| idx.iter().map(|&i| y[i]).collect::<Vec<_>>();
    let seeded = |spec: &LearnerSpec, k: u64| spec.clone().with_seed(derive_seed(spec.seed, 3 * seed_stream + k));
    let jobs = par_map(3, |job| match job {
        0 => fit(&seeded(&cfg.outcome, 0), pick(&control).view(), &out(&control), None),
        1 => fit(&seeded(&cfg.outcome, 1), pick(&treated).view(), &out(&treated), None),
        _ => {
            let zf: Vec<f64> = rows.iter().map(|&i| f64::from(z[i])).collect();
            fit(&seeded(&cfg.propensity, 2), pick(rows).view(), &zf, None)
        }
    });
    let mut it = jobs.into_iter();
    let mu0 = it.next().expect("three jobs")?;
    let mu1 = it.next().expect("three jobs")?;
    let e = it.next().expect("three jobs")?;
    Ok((mu0, mu1, e))
}

/// Fit the nuisance functions. With a cross-fit plan, held-out values are
/// also stored for every training row.
pub fn fit_nuisance(
    ds: &Dataset,
    cfg: &NuisanceConfig,
    include_cluster: bool,
    crossfit: Option<&CrossFitPlan>,
) -> Result<NuisanceModels> {
    cfg.clip.validate()?;
    let plan = EncodingPlan::fit(ds.table(), include_cluster)?;
    let x = plan.apply(ds.table())?;
    let all: Vec<usize> = (0..ds.n_rows()).collect();
    let (mu0, mu1, e) = fit_arm_models(&x, ds, &all, cfg, 0)?;

    let held_out = match crossfit {
        None => None,
        Some(cf) => {
            if cf.n_rows() != ds.n_rows() {
                return Err(Error::Plan("cross-fit plan does not match the dataset".into()));
            }
            let mut h = HeldOut {
                mu0: vec![f64::NAN; ds.n_rows()],
                mu1: vec![f64::NAN; ds.n_rows()],
                e_raw: vec![f64::NAN; ds.n_rows()],
            };
            for k in 0..cf.n_folds() {
                let test = cf.rows_in(k);
                if test.is_empty() {
                    return Err(Error::Plan(format!("fold {k} is empty")));
                }
                let (m0, m1, me) = fit_arm_models(&x, ds, &cf.rows_outside(k), cfg, 1 + k as u64)?;
                let xt = x.select(Axis(0), &test);
                let (p0, p1, pe) = (m0.predict(xt.view())?, m1.predict(xt.view())?, me.predict(xt.view())?);
                for (j, &i) in test.iter().enumerate() {
                    h.mu0[i] = p0[j];
                    h.mu1[i] = p1[j];
                    h.e_raw[i] = pe[j];
                }
            }
            Some(h)
        }
    };
    Ok(NuisanceModels { plan, mu0, mu1, e, clip: cfg.clip, held_out })
}

/// Distribution of the unclipped propensity estimates over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    /// 10th, 20th, ..., 90th percentiles.
    pub deciles: Vec<f64>,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub n_below: usize,
    pub n_above: usize,
    pub n_flagged: usize,
}

pub fn overlap_report(nm: &NuisanceModels, ds: &Dataset) -> Result<OverlapReport> {
    let v = nm.training_values(ds)?;
    Ok(overlap_from_raw(&v.e_raw, nm.clip))
}

pub fn overlap_from_raw(e_raw: &[f64], clip: Clip) -> OverlapReport {
    let sorted = stats::sorted_copy(e_raw);
    let n_below = e_raw.iter().filter(|&&e| e < clip.lo).count();
    let n_above = e_raw.iter().filter(|&&e| e > clip.hi).count();
    OverlapReport {
        n: e_raw.len(),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        deciles: (1..10).map(|k| stats::quantile_sorted(&sorted, k as f64 / 10.0)).collect(),
        clip_lo: clip.lo,
        clip_hi: clip.hi,
        n_below,
        n_above,
        n_flagged: n_below + n_above,
    }
}
