mod common;

use hte_core::base_learners::LearnerSpec;
use hte_core::dgp::{generate, DgpKind, DgpSpec};
use hte_core::meta_learners::CateKind;
use hte_core::nuisance::NuisanceConfig;
use hte_core::stability::*;
use proptest::prelude::*;

fn small_suite(trees: usize) -> SuiteSpec {
    let mut s = SuiteSpec::default_suite(
        LearnerSpec::forest_with(trees, 5),
        LearnerSpec::gbt_with(50, 0.1, 3),
        NuisanceConfig::new(LearnerSpec::forest_with(trees, 5), LearnerSpec::forest_with(trees, 20)),
    );
    s.causal_forest.n_trees = 2 * trees;
    s
}

#[test]
fn single_t_learner_on_constant_arms() {
    let ds = common::dataset(
        vec![(0..60).map(|i| (i as f64 * 0.7).cos()).collect()],
        (0..60).map(|i| (i % 3 == 0) as u8).collect(),
        (0..60).map(|i| if i % 3 == 0 { 4.5 } else { 1.0 }).collect(),
        Some(6),
    );
    let mut suite = small_suite(10);
    suite.estimators = vec![EstimatorEntry::new(CateKind::T, LearnerSpec::forest_with(10, 3), false)];
    let run = run_suite(&ds, &suite, ds.table()).unwrap();
    assert_eq!(run.matrix.names(), ["T_forest_nocluster"]);
    assert!(run.matrix.rows().iter().all(|r| r == &[3.5]));
}

#[test]
fn default_suite_has_22_columns() {
    let s = generate(&DgpSpec::new(DgpKind::LinearTau, 500).with_seed(1)).unwrap();
    let run = run_suite(&s.dataset, &small_suite(30).with_seed(1), s.dataset.table()).unwrap();
    assert_eq!(run.matrix.n_estimators() + run.failures.len(), 22);
    assert!(run.failures.is_empty(), "{:?}", run.failures);
    assert_eq!(run.matrix.names(), small_suite(30).names());
    assert!(run.matrix.rows().iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn zero_effect_estimates_concentrate_near_zero() {
    let mut spec = DgpSpec::new(DgpKind::ConstantEffect, 2000).with_seed(2).with_noise(0.25);
    spec.effect = 0.0;
    let s = generate(&spec).unwrap();
    let mut suite = SuiteSpec::default_suite(
        LearnerSpec::forest_with(200, 5),
        LearnerSpec::gbt_with(100, 0.05, 3),
        NuisanceConfig::new(LearnerSpec::forest_with(200, 5), LearnerSpec::forest_with(200, 20)),
    )
    .with_seed(2);
    suite.causal_forest.n_trees = 500;
    let run = run_suite(&s.dataset, &suite, s.dataset.table()).unwrap();
    let all: Vec<f64> = run.matrix.rows().iter().flatten().copied().collect();
    let near = all.iter().filter(|v| v.abs() <= 0.2).count() as f64 / all.len() as f64;
    assert!(near >= 0.9, "share within 0.2: {near}");
}

#[test]
fn suite_is_reproducible_across_thread_counts() {
    let s = generate(&DgpSpec::new(DgpKind::Goldilocks, 300).with_seed(3)).unwrap();
    let suite = small_suite(20).with_seed(3);
    let run_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_suite(&s.dataset, &suite, s.dataset.table()).unwrap().matrix)
    };
    let one = run_with(1);
    assert_eq!(one, run_with(4));
    assert_eq!(one, run_with(1));
}

fn row_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 2..8)
}

proptest! {
    #[test]
    fn raising_the_threshold_never_turns_withhold_into_treat(row in row_strategy(), t in -2.0f64..2.0, dt in 0.0f64..2.0) {
        for mode in [EnvelopeMode::Pessimistic, EnvelopeMode::Optimistic] {
            if envelope_decision(&row, mode, t) == Decision::Withhold {
                prop_assert_ne!(envelope_decision(&row, mode, t + dt), Decision::Treat);
            }
            if envelope_decision(&row, mode, t + dt) == Decision::Treat {
                prop_assert_eq!(envelope_decision(&row, mode, t), Decision::Treat);
            }
        }
    }

    #[test]
    fn column_order_does_not_change_row_statistics(rows in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), 1..12), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("u{i}")).collect();
        let names: Vec<String> = (0..4).map(|j| format!("e{j}")).collect();
        let m = EstimateMatrix::new(ids.clone(), names.clone(), rows.clone()).unwrap();
        let mut perm: Vec<usize> = (0..4).collect();
        perm.shuffle(&mut hte_core::seeding::rng(seed));
        let permuted = EstimateMatrix::new(
            ids,
            perm.iter().map(|&j| names[j].clone()).collect(),
            rows.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect(),
        )
        .unwrap();
        let a = stability_report(&m, Some(0.5)).unwrap();
        let b = stability_report(&permuted, Some(0.5)).unwrap();
        prop_assert_eq!(a, b);
        for u in stability_report(&m, None).unwrap().units {
            prop_assert!(u.min <= u.median && u.median <= u.max);
            prop_assert!((0.0..=1.0).contains(&u.sign_agreement));
        }
    }
}
