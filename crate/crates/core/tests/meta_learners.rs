mod common;

use common::{column, normal, rmse, simulate};
use hte_core::base_learners::{CrossFitPlan, LearnerSpec};
use hte_core::data::Dataset;
use hte_core::dgp::{generate_split, score, DgpKind, DgpSpec, Metric};
use hte_core::meta_learners::*;
use hte_core::nuisance::{fit_nuisance, NuisanceConfig};
use hte_core::seeding::rng;
use rand::Rng as _;

#[test]
fn t_learner_recovers_linear_effect_without_noise() {
    let f = |x: &[f64], z: u8| x[1] + f64::from(z) * x[0];
    let train = simulate(1, 2000, 2, 0.5, 0.0, f);
    let test = simulate(2, 500, 2, 0.5, 0.0, f);
    let m = fit_t(&train, &LearnerSpec::forest_with(200, 5).with_seed(3), false).unwrap();
    let err = rmse(&m.predict_cate(test.table()).unwrap(), &column(&test, "x1"));
    assert!(err <= 0.1, "rmse {err}");
}

#[test]
fn s_learner_recovers_additive_effect() {
    let f = |x: &[f64], z: u8| x[0] + 2.0 * f64::from(z);
    let train = simulate(4, 2000, 2, 0.5, 0.0, f);
    let test = simulate(5, 500, 2, 0.5, 0.0, f);
    let m = fit_s(&train, &LearnerSpec::forest_with(200, 5).with_seed(6), false).unwrap();
    let tau = m.predict_cate(test.table()).unwrap();
    let err = rmse(&tau, &vec![2.0; tau.len()]);
    assert!(err <= 0.1, "rmse {err}");
}

#[test]
fn r_learner_with_boosting_on_randomized_linear_effect() {
    let f = |x: &[f64], z: u8| x[1] + f64::from(z) * x[0];
    let train = simulate(7, 2000, 2, 0.5, 0.25, f);
    let test = simulate(8, 500, 2, 0.5, 0.0, f);
    let base = LearnerSpec::gbt_with(100, 0.05, 3).with_seed(9);
    let nc = NuisanceConfig::new(base.clone(), LearnerSpec::gbt_with(50, 0.05, 2));
    let plan = CrossFitPlan::new(train.table(), 5, 10).unwrap();
    let m = fit_r(&train, &base, &nc, &plan, false).unwrap();
    let err = rmse(&m.predict_cate(test.table()).unwrap(), &column(&test, "x1"));
    assert!(err <= 0.15, "rmse {err}");
}

#[test]
fn mo_pseudo_outcome_is_unbiased_with_true_nuisances() {
    let mut r = rng(11);
    for &x1 in &[-1.2, 0.0, 0.7] {
        for &e in &[0.5, 0.2] {
            let mu0 = x1 * x1;
            let mu1 = mu0 + f64::sin(x1);
            let draws = 100_000;
            let mean = (0..draws)
                .map(|_| {
                    let z = u8::from(r.random::<f64>() < e);
                    let y = if z == 1 { mu1 } else { mu0 } + normal(&mut r);
                    mo_pseudo_outcome(z, y, e, mu0, mu1)
                })
                .sum::<f64>()
                / draws as f64;
            assert!((mean - x1.sin()).abs() < 0.02, "x1={x1} e={e} mean {mean}");
        }
    }
}

#[test]
fn x_learner_beats_t_learner_on_unbalanced_arms() {
    let (tr, te) = generate_split(&DgpSpec::new(DgpKind::UnbalancedArms, 4000).with_seed(12), 2000).unwrap();
    let base = LearnerSpec::forest_with(100, 5).with_seed(13);
    let nm = fit_nuisance(&tr.dataset, &NuisanceConfig::new(base.clone(), LearnerSpec::forest_with(100, 20)), false, None).unwrap();
    let t = fit_t(&tr.dataset, &base, false).unwrap().predict_cate(te.dataset.table()).unwrap();
    let x = fit_x(&tr.dataset, &base, &nm).unwrap().predict_cate(te.dataset.table()).unwrap();
    let (rt, rx) = (score(&t, &te.tau, Metric::Rmse).unwrap(), score(&x, &te.tau, Metric::Rmse).unwrap());
    assert!(rx <= rt, "X {rx} T {rt}");
}

fn shifted(ds: &Dataset, c: f64) -> Dataset {
    ds.with_outcome(ds.outcome().iter().map(|y| y + c).collect()).unwrap()
}

#[test]
fn outcome_shift_leaves_cate_unchanged() {
    let ds = simulate(14, 300, 2, 0.4, 1.0, |x, z| x[0] + f64::from(z) * (1.0 + x[1]));
    let sh = shifted(&ds, 7.5);
    let base = LearnerSpec::knn(15);
    let nc = NuisanceConfig::new(LearnerSpec::knn(15), LearnerSpec::ridge(1.0));
    let plan = CrossFitPlan::new(ds.table(), 5, 15).unwrap();
    let fits: Vec<Box<dyn Fn(&Dataset) -> CateModel>> = vec![
        Box::new(|d| fit_t(d, &base, false).unwrap()),
        Box::new(|d| fit_x(d, &base, &fit_nuisance(d, &nc, false, None).unwrap()).unwrap()),
        Box::new(|d| fit_mo(d, &base, &fit_nuisance(d, &nc, false, None).unwrap()).unwrap()),
        Box::new(|d| fit_r(d, &base, &nc, &plan, false).unwrap()),
        Box::new(|d| fit_s(d, &LearnerSpec::ridge(0.5), false).unwrap()),
    ];
    for fit in &fits {
        let a = fit(&ds).predict_cate(ds.table()).unwrap();
        let b = fit(&sh).predict_cate(ds.table()).unwrap();
        let gap = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-6, "gap {gap}");
    }
}

#[test]
fn arm_swap_negates_t_learner() {
    let ds = simulate(16, 400, 2, 0.5, 1.0, |x, z| x[0] + f64::from(z) * x[1]);
    let swapped = ds.with_treatment(ds.treatment().iter().map(|z| 1 - z).collect()).unwrap();
    for base in [LearnerSpec::gbt_with(30, 0.1, 3), LearnerSpec::knn(5)] {
        let a = fit_t(&ds, &base, false).unwrap().predict_cate(ds.table()).unwrap();
        let b = fit_t(&swapped, &base, false).unwrap().predict_cate(ds.table()).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| *p == -*q));
    }
}

#[test]
fn x_combine_endpoints() {
    for (t0, t1) in [(0.3, -1.0), (2.0, 5.5)] {
        assert_eq!(x_combine(0.0, t0, t1), t1);
        assert_eq!(x_combine(1.0, t0, t1), t0);
    }
}
