mod common;

use common::{dataset, simulate, uniform};
use hte_core::base_learners::{CrossFitPlan, LearnerSpec};
use hte_core::dgp::{generate, DgpKind, DgpSpec};
use hte_core::nuisance::{fit_nuisance, overlap_report, Clip, NuisanceConfig};
use hte_core::seeding::rng;
use hte_core::stats::mean;
use proptest::prelude::*;
use rand::seq::SliceRandom;

#[test]
fn randomized_propensity_is_recovered() {
    let mut spec = DgpSpec::new(DgpKind::ConstantEffect, 5000).with_seed(1);
    spec.propensity = 0.33;
    let s = generate(&spec).unwrap();
    let cfg = NuisanceConfig::new(LearnerSpec::forest_with(100, 5), LearnerSpec::forest_with(100, 20));
    let nm = fit_nuisance(&s.dataset, &cfg, false, None).unwrap();
    let e = nm.training_values(&s.dataset).unwrap().e;
    assert!((mean(&e) - 0.33).abs() < 0.02, "mean e {}", mean(&e));
}

#[test]
fn confounded_overlap_stays_near_the_true_range() {
    let s = generate(&DgpSpec::new(DgpKind::Confounded, 5000).with_seed(2)).unwrap();
    let truth = s.e.iter().fold((1.0f64, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    assert!(truth.0 >= 0.15 - 1e-12 && truth.1 <= 0.46 + 1e-12);
    let cfg = NuisanceConfig::new(LearnerSpec::ridge(1.0), LearnerSpec::ridge(1.0));
    let nm = fit_nuisance(&s.dataset, &cfg, false, None).unwrap();
    let rep = overlap_report(&nm, &s.dataset).unwrap();
    assert!(rep.min >= 0.10 && rep.max <= 0.55, "{rep:?}");
    assert!(rep.deciles.windows(2).all(|w| w[0] <= w[1]));
    assert!(rep.min <= rep.deciles[0] && rep.deciles[8] <= rep.max);
}

#[test]
fn outcome_models_never_see_the_other_arm() {
    let ds = simulate(3, 400, 2, 0.5, 1.0, |x, _| x[0]);
    let poisoned: Vec<f64> = ds.outcome().iter().zip(ds.treatment()).map(|(&y, &z)| if z == 1 { y + 1e6 } else { y }).collect();
    let ds = ds.with_outcome(poisoned).unwrap();
    let cfg = NuisanceConfig::new(LearnerSpec::forest_with(30, 5), LearnerSpec::ridge(1.0));
    let v = fit_nuisance(&ds, &cfg, false, None).unwrap().training_values(&ds).unwrap();
    assert!(v.mu0.iter().all(|&m| m.abs() < 1e3));
    assert!(v.mu1.iter().all(|&m| m > 1e5));
}

#[test]
fn held_out_propensity_ignores_row_order_in_other_folds() {
    let n = 300;
    let mut r = rng(4);
    let x1 = uniform(&mut r, n, -1.0, 1.0);
    let x2 = uniform(&mut r, n, -1.0, 1.0);
    let z: Vec<u8> = (0..n).map(|i| u8::from(x1[i] + 0.3 * x2[i] > 0.0) ^ u8::from(i % 7 == 0)).collect();
    let y: Vec<f64> = x1.iter().map(|v| v * 2.0).collect();
    let folds: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let ds = dataset(vec![x1.clone(), x2.clone()], z.clone(), y.clone(), None);
    let cfg = NuisanceConfig::new(LearnerSpec::knn(7), LearnerSpec::knn(9));
    let plan = CrossFitPlan::from_assignment(folds.clone(), 3, 0).unwrap();
    let base = fit_nuisance(&ds, &cfg, false, Some(&plan)).unwrap().training_values(&ds).unwrap();

    // shuffle the rows of folds 1 and 2 among their own positions
    let mut perm: Vec<usize> = (0..n).collect();
    let others: Vec<usize> = (0..n).filter(|&i| folds[i] != 0).collect();
    let mut shuffled = others.clone();
    shuffled.shuffle(&mut r);
    for (&pos, &src) in others.iter().zip(&shuffled) {
        perm[pos] = src;
    }
    let pick = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let pz: Vec<u8> = perm.iter().map(|&i| z[i]).collect();
    let pfolds: Vec<usize> = perm.iter().map(|&i| folds[i]).collect();
    let pds = dataset(vec![pick(&x1), pick(&x2)], pz, pick(&y), None);
    let pplan = CrossFitPlan::from_assignment(pfolds, 3, 0).unwrap();
    let moved = fit_nuisance(&pds, &cfg, false, Some(&pplan)).unwrap().training_values(&pds).unwrap();
    for i in (0..n).filter(|&i| folds[i] == 0) {
        assert_eq!(base.e_raw[i], moved.e_raw[i], "row {i}");
    }
}

proptest! {
    #[test]
    fn clipping_is_idempotent_and_monotone(lo in 0.001f64..0.2, width in 0.1f64..0.79, a in -1.0f64..2.0, b in -1.0f64..2.0) {
        let clip = Clip::new(lo, lo + width).unwrap();
        let (ca, cb) = (clip.apply(a), clip.apply(b));
        prop_assert_eq!(clip.apply(ca), ca);
        prop_assert!(ca >= clip.lo && ca <= clip.hi);
        if a <= b {
            prop_assert!(ca <= cb);
        }
    }
}
