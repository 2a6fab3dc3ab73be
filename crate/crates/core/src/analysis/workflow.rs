//! Exploration/validation workflow: models and curves come from the
//! exploration half only; hypotheses are fixed before the validation half is
//! released for subgroup estimation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{default_grid, marginal_cate, pdp, CurveTable, SubgroupAteInputs, SubgroupComparison, SubgroupDef};
use crate::ate::{AteTag, BootstrapConfig};
use crate::base_learners::CrossFitPlan;
use crate::data::{cluster_split, Dataset, SplitAssignment};
use crate::error::{Error, Result};
use crate::meta_learners::CateModel;
use crate::nuisance::{fit_nuisance, NuisanceConfig};
use crate::seeding::{derive_seed, name_hash};
use crate::stability::{fit_suite, EstimatorFailure, SuiteSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowConfig {
    /// Features to draw curves for.
    pub curve_features: Vec<String>,
    pub marginal_bins: usize,
    pub pdp_points: usize,
    pub tag: AteTag,
    pub nuisance: NuisanceConfig,
    pub crossfit_folds: usize,
    pub matching_features: Vec<String>,
    pub boot: BootstrapConfig,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisResult {
    #[serde(flatten)]
    pub comparison: SubgroupComparison,
    pub validated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploreValidateReport {
    pub seed: u64,
    pub exploration_units: usize,
    pub validation_units: usize,
    pub exploration_clusters: usize,
    pub validation_clusters: usize,
    pub estimators: Vec<String>,
    pub failures: Vec<EstimatorFailure>,
    pub curves: Vec<CurveTable>,
    pub hypotheses: Vec<HypothesisResult>,
}

/// Holds both halves of a cluster split. Only the exploration half is
/// reachable until [`Workflow::validate`] consumes the workflow, and curve
/// operations refuse any model whose training rows include a validation
/// unit.
#[derive(Debug)]
pub struct Workflow {
    seed: u64,
    split: SplitAssignment,
    exploration: Dataset,
    validation: Dataset,
    validation_ids: BTreeSet<String>,
    models: Vec<CateModel>,
    failures: Vec<EstimatorFailure>,
    hypotheses: Vec<SubgroupDef>,
}

impl Workflow {
    pub fn new(ds: &Dataset, seed: u64) -> Result<Self> {
        let split = cluster_split(ds, seed)?;
        let exploration = ds.subset(&split.exploration)?;
        let validation = ds.subset(&split.validation)?;
        let validation_ids = validation.unit_ids().iter().cloned().collect();
        Ok(Workflow {
            seed,
            split,
            exploration,
            validation,
            validation_ids,
            models: vec![],
            failures: vec![],
            hypotheses: vec![],
        })
    }

    pub fn split(&self) -> &SplitAssignment {
        &self.split
    }

    pub fn exploration(&self) -> &Dataset {
        &self.exploration
    }

    pub fn models(&self) -> &[CateModel] {
        &self.models
    }

    pub fn hypotheses(&self) -> &[SubgroupDef] {
        &self.hypotheses
    }

    /// Fit the suite on the exploration half.
    pub fn fit_suite(&mut self, suite: &SuiteSpec) -> Result<()> {
        let fitted = fit_suite(&self.exploration, suite)?;
        self.models = fitted.models;
        self.failures = fitted.failures;
        Ok(())
    }

    /// Add externally fitted models; they are checked like suite models.
    pub fn add_model(&mut self, model: CateModel) -> Result<()> {
        self.check_provenance(&model)?;
        self.models.push(model);
        Ok(())
    }

    fn check_provenance(&self, model: &CateModel) -> Result<()> {
        if let Some(id) = model.training_units().iter().find(|id| self.validation_ids.contains(*id)) {
            return Err(Error::Workflow(format!("{} was trained on validation unit {id}", model.name())));
        }
        Ok(())
    }

    fn checked_models(&self) -> Result<&[CateModel]> {
        if self.models.is_empty() {
            return Err(Error::Workflow("no models have been fitted on the exploration half".into()));
        }
        for m in &self.models {
            self.check_provenance(m)?;
        }
        Ok(&self.models)
    }

    /// Partial dependence and marginal CATE curves on the exploration half.
    pub fn curves(&self, feature: &str, marginal_bins: usize, pdp_points: usize) -> Result<[CurveTable; 2]> {
        let models = self.checked_models()?;
        let table = self.exploration.table();
        let grid = default_grid(table, feature, pdp_points)?;
        Ok([marginal_cate(models, table, feature, marginal_bins)?, pdp(models, table, feature, &grid)?])
    }

    pub fn declare(&mut self, hypothesis: SubgroupDef) {
        self.hypotheses.push(hypothesis);
    }

    /// Release the validation half and test every declared hypothesis on it.
    pub fn validate(self, cfg: &WorkflowConfig) -> Result<Vec<HypothesisResult>> {
        if self.hypotheses.is_empty() {
            return Ok(vec![]);
        }
        let val = &self.validation;
        let nuisance = match cfg.tag {
            AteTag::MATCH => None,
            _ => {
                let plan = CrossFitPlan::new(val.table(), cfg.crossfit_folds, derive_seed(self.seed, name_hash("validation_folds")))?;
                Some(fit_nuisance(val, &cfg.nuisance, false, Some(&plan))?)
            }
        };
        self.hypotheses
            .iter()
            .enumerate()
            .map(|(k, h)| {
                let inputs = SubgroupAteInputs {
                    tag: cfg.tag,
                    nuisance: nuisance.as_ref(),
                    matching_features: &cfg.matching_features,
                    boot: BootstrapConfig { seed: derive_seed(cfg.boot.seed, k as u64), ..cfg.boot },
                };
                let comparison = super::compare_subgroup(val, h, &inputs)?;
                let validated = comparison.p_value < cfg.alpha;
                Ok(HypothesisResult { comparison, validated })
            })
            .collect()
    }
}

/// Split by cluster, fit the suite and draw curves on the exploration half,
/// then test the hypotheses on the validation half.
pub fn explore_validate(
    ds: &Dataset,
    seed: u64,
    suite: &SuiteSpec,
    hypotheses: &[SubgroupDef],
    cfg: &WorkflowConfig,
) -> Result<ExploreValidateReport> {
    let mut wf = Workflow::new(ds, seed)?;
    wf.fit_suite(suite)?;
    let mut curves = Vec::new();
    for f in &cfg.curve_features {
        curves.extend(wf.curves(f, cfg.marginal_bins, cfg.pdp_points)?);
    }
    for h in hypotheses {
        wf.declare(h.clone());
    }
    let clusters = |rows: &[usize]| rows.iter().map(|&i| ds.table().cluster_key(i)).collect::<BTreeSet<_>>().len();
    let report = ExploreValidateReport {
        seed,
        exploration_units: wf.split.exploration.len(),
        validation_units: wf.split.validation.len(),
        exploration_clusters: clusters(&wf.split.exploration),
        validation_clusters: clusters(&wf.split.validation),
        estimators: wf.models.iter().map(CateModel::name).collect(),
        failures: wf.failures.clone(),
        curves,
        hypotheses: vec![],
    };
    let hypotheses = wf.validate(cfg)?;
    Ok(ExploreValidateReport { hypotheses, ..report })
}
