mod common;

use common::{dataset, normal, uniform};
use hte_core::analysis::*;
use hte_core::ate::{ate_regression, AteTag, BootstrapConfig};
use hte_core::base_learners::{FittedModel, LearnerSpec, OracleFn};
use hte_core::data::{ClusterKey, Dataset, EncodingPlan, GridValue};
use hte_core::dgp::{generate, DgpKind, DgpSpec};
use hte_core::error::Error;
use hte_core::meta_learners::{fit_t, CateKind, CateModel};
use hte_core::nuisance::{fit_nuisance, Clip, NuisanceConfig, NuisanceModels};
use hte_core::seeding::rng;
use hte_core::stability::{EstimatorEntry, SuiteSpec};
use proptest::prelude::*;
use rand::Rng;

type Surface = fn(f64, f64) -> f64;

fn two_feature_data(seed: u64, n: usize, e: f64, tau: Surface, noise: f64) -> Dataset {
    let mut r = rng(seed);
    let x1 = uniform(&mut r, n, -1.0, 1.0);
    let x2 = uniform(&mut r, n, -1.0, 1.0);
    let z: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(e))).collect();
    let y = (0..n).map(|i| x1[i] + 0.5 * x2[i] + f64::from(z[i]) * tau(x1[i], x2[i]) + noise * normal(&mut r)).collect();
    dataset(vec![x1, x2], z, y, Some(40))
}

fn oracle_cate(ds: &Dataset, f: Surface) -> CateModel {
    let plan = EncodingPlan::fit(ds.table(), false).unwrap();
    let k = plan.n_columns();
    CateModel::t_from_models(plan, FittedModel::constant(0.0, k), FittedModel::oracle(OracleFn::new(move |r| f(r[0], r[1])), k))
}

fn oracle_nuisance(ds: &Dataset, e: f64, tau: Surface) -> NuisanceModels {
    let plan = EncodingPlan::fit(ds.table(), false).unwrap();
    let k = plan.n_columns();
    NuisanceModels::from_parts(
        plan,
        FittedModel::oracle(OracleFn::new(|r| r[0] + 0.5 * r[1]), k),
        FittedModel::oracle(OracleFn::new(move |r| r[0] + 0.5 * r[1] + tau(r[0], r[1])), k),
        FittedModel::constant(e, k),
        Clip::default(),
    )
    .unwrap()
}

fn inputs(tag: AteTag, nm: Option<&NuisanceModels>, seed: u64) -> SubgroupAteInputs<'_> {
    SubgroupAteInputs { tag, nuisance: nm, matching_features: &[], boot: BootstrapConfig::new(200, 0.95, seed) }
}

fn grid(vals: &[f64]) -> Vec<GridValue> {
    vals.iter().map(|&v| GridValue::Number(v)).collect()
}

#[test]
fn pdp_of_additive_oracle_is_exact() {
    let ds = two_feature_data(1, 300, 0.5, |_, _| 0.0, 1.0);
    let m = oracle_cate(&ds, |a, b| a * a + b.sin());
    let g = [-0.5, 0.0, 0.75];
    let c = pdp(&[m], ds.table(), "x1", &grid(&g)).unwrap();
    let x2 = common::column(&ds, "x2");
    let mean_h = x2.iter().map(|b| b.sin()).sum::<f64>() / x2.len() as f64;
    for (v, row) in g.iter().zip(&c.values) {
        assert!((row[0] - (v * v + mean_h)).abs() < 1e-12);
    }
}

#[test]
fn marginal_curve_is_flat_over_an_unrelated_feature() {
    let ds = two_feature_data(2, 20_000, 0.5, |_, _| 0.0, 1.0);
    let c = marginal_cate(&[oracle_cate(&ds, |a, _| a)], ds.table(), "x2", 20).unwrap();
    assert_eq!(c.values.len(), 20);
    for row in &c.values {
        assert!(row[0].abs() < 0.08, "{}", row[0]);
    }
}

#[test]
fn subgroup_effects_with_true_nuisances() {
    let tau: Surface = |a, _| if a < 0.0 { 0.31 } else { 0.21 };
    let ds = two_feature_data(3, 20_000, 0.5, tau, 1.0);
    let nm = oracle_nuisance(&ds, 0.5, tau);
    let def = SubgroupDef::parse("x1 < 0").unwrap();
    for tag in [AteTag::AIPW, AteTag::REG] {
        let (s, c) = subgroup_ate(&ds, &def, &inputs(tag, Some(&nm), 3)).unwrap();
        assert!((s.point - 0.31).abs() < 0.03, "{tag} subgroup {}", s.point);
        assert!((c.point - 0.21).abs() < 0.03, "{tag} complement {}", c.point);
    }
}

#[test]
fn regression_estimates_decompose_over_subgroup_and_complement() {
    let ds = two_feature_data(4, 1500, 0.4, |a, b| 0.2 + a * b, 1.0);
    let nm = fit_nuisance(&ds, &NuisanceConfig::new(LearnerSpec::knn(10), LearnerSpec::ridge(1.0)), false, None).unwrap();
    let def = SubgroupDef::parse("x2 >= 0.3").unwrap();
    let (s, c) = subgroup_ate(&ds, &def, &inputs(AteTag::REG, Some(&nm), 4)).unwrap();
    let n_s = def.mask(ds.table()).unwrap().iter().filter(|&&b| b).count() as f64;
    let n = ds.n_rows() as f64;
    let full = ate_regression(&ds, &nm, &BootstrapConfig::new(200, 0.95, 4)).unwrap().point;
    assert!((n_s * s.point + (n - n_s) * c.point - n * full).abs() < 1e-9 * n);
}

#[test]
fn subgroup_covering_everything_reports_the_complement() {
    let ds = two_feature_data(5, 200, 0.5, |_, _| 0.0, 1.0);
    let nm = oracle_nuisance(&ds, 0.5, |_, _| 0.0);
    let def = SubgroupDef::parse("x1 > -5").unwrap();
    match subgroup_ate(&ds, &def, &inputs(AteTag::AIPW, Some(&nm), 5)) {
        Err(Error::Subgroup(m)) => assert!(m.contains("complement"), "{m}"),
        other => panic!("expected a subgroup error, got {other:?}"),
    }
}

#[test]
fn zero_effect_intervals_cover_zero() {
    let def = SubgroupDef::parse("x1 < 0").unwrap();
    let sims = 100;
    let mut covered = [0usize; 2];
    for k in 0..sims {
        let ds = two_feature_data(100 + k, 2000, 0.5, |_, _| 0.0, 1.0);
        let nm = oracle_nuisance(&ds, 0.5, |_, _| 0.0);
        let (s, c) = subgroup_ate(&ds, &def, &inputs(AteTag::AIPW, Some(&nm), k)).unwrap();
        for (j, est) in [s, c].iter().enumerate() {
            covered[j] += usize::from(est.ci_lo <= 0.0 && 0.0 <= est.ci_hi);
        }
    }
    for c in covered {
        assert!(c as f64 / sims as f64 >= 0.88, "coverage {c}/{sims}");
    }
}

fn group(r: &mut rand_chacha::ChaCha8Rng, n: usize, mean: f64, clusters: usize) -> GroupScores {
    GroupScores {
        scores: (0..n).map(|_| mean + normal(r)).collect(),
        clusters: (0..n).map(|i| ClusterKey::Named(format!("s{}", i % clusters))).collect(),
    }
}

#[test]
fn difference_test_is_calibrated_under_the_null() {
    let mut r = rng(6);
    let sims = 200;
    let quiet = (0..sims)
        .filter(|&k| {
            let a = group(&mut r, 300, 0.25, 20);
            let b = group(&mut r, 300, 0.25, 20);
            subgroup_difference_test(&a, &b, &BootstrapConfig::new(200, 0.95, k)).unwrap() > 0.05
        })
        .count();
    assert!(quiet as f64 >= 0.9 * sims as f64, "{quiet}/{sims}");
}

#[test]
fn difference_test_detects_a_large_contrast() {
    let tau: Surface = |a, _| if a < 0.0 { 0.75 } else { 0.25 };
    let ds = two_feature_data(7, 20_000, 0.5, tau, 1.0);
    let nm = oracle_nuisance(&ds, 0.5, tau);
    let cmp = compare_subgroup(&ds, &SubgroupDef::parse("x1 < 0").unwrap(), &inputs(AteTag::AIPW, Some(&nm), 7)).unwrap();
    assert!(cmp.p_value < 0.01, "{}", cmp.p_value);
    assert!((cmp.difference - 0.5).abs() < 0.1);
}

#[test]
fn difference_test_rejects_few_replicates() {
    let mut r = rng(8);
    let (a, b) = (group(&mut r, 20, 0.0, 4), group(&mut r, 20, 0.0, 4));
    assert!(matches!(subgroup_difference_test(&a, &b, &BootstrapConfig::new(99, 0.95, 8)), Err(Error::Config(_))));
}

fn ridge_suite(seed: u64) -> SuiteSpec {
    let mut s = SuiteSpec::default_suite(
        LearnerSpec::ridge(1.0),
        LearnerSpec::ridge(1.0),
        NuisanceConfig::new(LearnerSpec::ridge(1.0), LearnerSpec::ridge(1.0)),
    )
    .with_seed(seed);
    s.estimators = vec![
        EstimatorEntry::new(CateKind::S, LearnerSpec::ridge(1.0), false),
        EstimatorEntry::new(CateKind::T, LearnerSpec::ridge(1.0), false),
    ];
    s
}

fn workflow_config(features: &[&str], tag: AteTag) -> WorkflowConfig {
    WorkflowConfig {
        curve_features: features.iter().map(|f| f.to_string()).collect(),
        marginal_bins: 10,
        pdp_points: 5,
        tag,
        nuisance: NuisanceConfig::new(LearnerSpec::ridge(1.0), LearnerSpec::ridge(1.0)),
        crossfit_folds: 5,
        matching_features: vec![],
        boot: BootstrapConfig::new(200, 0.95, 9),
        alpha: 0.05,
    }
}

#[test]
fn workflow_without_hypotheses_reports_curves_only() {
    let s = generate(&DgpSpec::new(DgpKind::LinearTau, 1000).with_seed(9)).unwrap();
    let report = explore_validate(&s.dataset, 9, &ridge_suite(9), &[], &workflow_config(&["x1"], AteTag::AIPW)).unwrap();
    assert!(report.hypotheses.is_empty());
    assert_eq!(report.curves.len(), 2);
    assert_eq!(report.exploration_units + report.validation_units, 1000);
    let again = explore_validate(&s.dataset, 9, &ridge_suite(9), &[], &workflow_config(&["x1"], AteTag::AIPW)).unwrap();
    assert_eq!(report, again);
}

#[test]
fn urbanicity_contrast_is_validated() {
    let s = generate(&DgpSpec::new(DgpKind::ClusteredSchool, 20_000)).unwrap();
    let h = [SubgroupDef::parse("urbanicity = 3").unwrap()];
    let cfg = workflow_config(&["achievement"], AteTag::AIPW);
    let report = explore_validate(&s.dataset, 0, &ridge_suite(0), &h, &cfg).unwrap();
    let r = &report.hypotheses[0];
    assert!(r.validated, "p = {}", r.comparison.p_value);
    assert!(r.comparison.difference < 0.0);
    let again = explore_validate(&s.dataset, 0, &ridge_suite(0), &h, &cfg).unwrap();
    assert_eq!(report, again);
}

#[test]
fn workflow_refuses_models_trained_on_validation_units() {
    let s = generate(&DgpSpec::new(DgpKind::LinearTau, 800).with_seed(10)).unwrap();
    let mut wf = Workflow::new(&s.dataset, 10).unwrap();
    let full = fit_t(&s.dataset, &LearnerSpec::ridge(1.0), false).unwrap();
    assert!(matches!(wf.add_model(full), Err(Error::Workflow(_))));
    assert!(matches!(wf.curves("x1", 10, 5), Err(Error::Workflow(_))));
    let explore = fit_t(wf.exploration(), &LearnerSpec::ridge(1.0), false).unwrap();
    wf.add_model(explore).unwrap();
    assert_eq!(wf.curves("x1", 10, 5).unwrap()[0].estimators, ["T_ridge_nocluster"]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pdp_is_linear_in_the_model(lambda in 0.0f64..1.0, a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..1000) {
        let ds = two_feature_data(seed, 50, 0.5, |_, _| 0.0, 1.0);
        let plan = EncodingPlan::fit(ds.table(), false).unwrap();
        let k = plan.n_columns();
        let f = move |r: &[f64]| a * r[0] * r[1] + r[1].cos();
        let g = move |r: &[f64]| b * r[0].exp() - r[1];
        let model = |h: OracleFn| CateModel::t_from_models(plan.clone(), FittedModel::constant(0.0, k), FittedModel::oracle(h, k));
        let models = [
            model(OracleFn::new(move |r| f(r.as_slice().unwrap()))),
            model(OracleFn::new(move |r| g(r.as_slice().unwrap()))),
            model(OracleFn::new(move |r| lambda * f(r.as_slice().unwrap()) + (1.0 - lambda) * g(r.as_slice().unwrap()))),
        ];
        let c = pdp(&models, ds.table(), "x2", &grid(&[-0.9, -0.1, 0.4, 1.0])).unwrap();
        for row in &c.values {
            prop_assert!((row[2] - (lambda * row[0] + (1.0 - lambda) * row[1])).abs() < 1e-12);
        }
    }
}
