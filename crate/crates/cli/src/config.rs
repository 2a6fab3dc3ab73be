//! TOML run configuration.

use std::path::{Path, PathBuf};

use hte_core::ate::{AteTag, BootstrapConfig};
use hte_core::base_learners::LearnerSpec;
use hte_core::causal_forest::CausalForestSpec;
use hte_core::data::Schema;
use hte_core::dgp::DgpSpec;
use hte_core::meta_learners::CateKind;
use hte_core::nuisance::{Clip, NuisanceConfig};
use hte_core::seeding::{derive_seed, name_hash};
use hte_core::sensitivity::PValueMode;
use hte_core::stability::{EnvelopeMode, SuiteSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub schema: Option<Schema>,
    #[serde(default)]
    pub suite: SuiteSection,
    #[serde(default)]
    pub nuisance: NuisanceSection,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
    #[serde(default)]
    pub ate: AteSection,
    #[serde(default)]
    pub sensitivity: SensitivitySection,
    #[serde(default)]
    pub stability: StabilitySection,
    #[serde(default)]
    pub subgroup: SubgroupSection,
    #[serde(default)]
    pub curves: CurveSection,
    #[serde(default)]
    pub simulate: Option<DgpSpec>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSection {
    pub forest: LearnerSpec,
    pub gbt: LearnerSpec,
    /// Subset of estimator kinds; all six when absent.
    pub kinds: Option<Vec<CateKind>>,
    /// Which cluster-indicator variants to fit; both when absent.
    pub with_cluster: Option<Vec<bool>>,
    pub crossfit_folds: usize,
    pub crossfit_nuisance: bool,
    pub causal_forest: CausalForestSpec,
}

impl Default for SuiteSection {
    fn default() -> Self {
        SuiteSection {
            forest: LearnerSpec::forest_with(200, 5),
            gbt: LearnerSpec::gbt_with(100, 0.05, 3),
            kinds: None,
            with_cluster: None,
            crossfit_folds: 5,
            crossfit_nuisance: false,
            causal_forest: CausalForestSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuisanceSection {
    pub outcome: LearnerSpec,
    pub propensity: LearnerSpec,
    pub clip: Clip,
}

impl Default for NuisanceSection {
    fn default() -> Self {
        NuisanceSection {
            outcome: LearnerSpec::forest_with(200, 5),
            propensity: LearnerSpec::forest_with(200, 20),
            clip: Clip::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub replicates: usize,
    pub level: f64,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        BootstrapSection { replicates: 1000, level: 0.95 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AteSection {
    pub estimators: Vec<AteTag>,
    /// Use held-out nuisance values for IPW, REG and AIPW.
    pub crossfit: bool,
    /// Matching features; every continuous feature when absent.
    pub matching_features: Option<Vec<String>>,
}

impl Default for AteSection {
    fn default() -> Self {
        AteSection { estimators: AteTag::ALL.to_vec(), crossfit: true, matching_features: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySection {
    pub alpha: f64,
    pub gamma_max: f64,
    pub gamma_step: f64,
    pub mode: PValueMode,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        SensitivitySection { alpha: 0.05, gamma_max: 3.0, gamma_step: 0.1, mode: PValueMode::Auto }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    /// Spread at or below which a unit counts as stable; the median spread
    /// when absent.
    pub spread_threshold: Option<f64>,
    pub envelope: EnvelopeMode,
    pub decision_threshold: f64,
}

impl Default for StabilitySection {
    fn default() -> Self {
        StabilitySection { spread_threshold: None, envelope: EnvelopeMode::Pessimistic, decision_threshold: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubgroupSection {
    pub hypotheses: Vec<String>,
    pub estimator: AteTag,
    pub alpha: f64,
}

impl Default for SubgroupSection {
    fn default() -> Self {
        SubgroupSection { hypotheses: vec![], estimator: AteTag::AIPW, alpha: 0.05 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveSection {
    pub features: Vec<String>,
    pub marginal_bins: usize,
    pub pdp_points: usize,
}

impl Default for CurveSection {
    fn default() -> Self {
        CurveSection { features: vec![], marginal_bins: 20, pdp_points: 20 }
    }
}

/// A parsed config together with where it came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub sha256: String,
    pub seed: u64,
}

impl Loaded {
    pub fn read(path: &Path, seed_override: Option<u64>) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| CliError::User("config is not valid UTF-8".into()))?;
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::User(format!("config: {e}")))?;
        let sha256 = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let seed = seed_override.unwrap_or(config.seed);
        Ok(Loaded { config, base_dir, sha256, seed })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn schema(&self) -> Result<&Schema, CliError> {
        self.config.schema.as_ref().ok_or_else(|| CliError::User("config has no [schema] table".into()))
    }

    pub fn input(&self) -> Result<PathBuf, CliError> {
        let p = self.config.data.input.as_ref().ok_or_else(|| CliError::User("config has no data.input path".into()))?;
        Ok(self.resolve(p))
    }

    pub fn stream(&self, name: &str) -> u64 {
        derive_seed(self.seed, name_hash(name))
    }

    pub fn nuisance(&self) -> NuisanceConfig {
        let n = &self.config.nuisance;
        NuisanceConfig { outcome: n.outcome.clone(), propensity: n.propensity.clone(), clip: n.clip }
    }

    pub fn boot(&self, stream: &str) -> BootstrapConfig {
        let b = &self.config.bootstrap;
        BootstrapConfig::new(b.replicates, b.level, self.stream(stream))
    }

    pub fn suite(&self) -> Result<SuiteSpec, CliError> {
        let s = &self.config.suite;
        let mut suite = SuiteSpec::default_suite(s.forest.clone(), s.gbt.clone(), self.nuisance());
        if let Some(kinds) = &s.kinds {
            suite.estimators.retain(|e| kinds.contains(&e.kind));
        }
        if let Some(flags) = &s.with_cluster {
            suite.estimators.retain(|e| flags.contains(&e.with_cluster));
        }
        suite.crossfit_folds = s.crossfit_folds;
        suite.crossfit_nuisance = s.crossfit_nuisance;
        suite.causal_forest = s.causal_forest.clone();
        let suite = suite.with_seed(self.stream("suite"));
        suite.validate()?;
        Ok(suite)
    }

    /// Comment line embedded at the top of every CSV output.
    pub fn provenance(&self) -> String {
        format!("config_sha256={} seed={}", self.sha256, self.seed)
    }
}
