#![allow(dead_code)]

use hte_core::data::{Column, Dataset, FeatureTable};
use hte_core::seeding::{rng, Rng};
use rand::Rng as _;

/// Continuous features `x1..xd` with optional cluster ids `c{i % clusters}`.
pub fn dataset(xs: Vec<Vec<f64>>, z: Vec<u8>, y: Vec<f64>, clusters: Option<usize>) -> Dataset {
    let n = z.len();
    let cols = xs.into_iter().enumerate().map(|(j, v)| Column::continuous(format!("x{}", j + 1), v)).collect();
    let cl = clusters.map(|k| (0..n).map(|i| Some(format!("c{}", i % k))).collect());
    let table = FeatureTable::new((0..n).map(|i| format!("u{i}")).collect(), cols, cl).unwrap();
    Dataset::new(table, z, y).unwrap()
}

pub fn uniform(r: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

pub fn bernoulli(r: &mut Rng, p: &[f64]) -> Vec<u8> {
    p.iter().map(|&p| u8::from(r.random::<f64>() < p)).collect()
}

pub fn normal(r: &mut Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(r)
}

/// `n` rows with `d` uniform(-1, 1) features, assignment probability `e`
/// and outcome `f(x, z)` plus Gaussian noise.
pub fn simulate<F: Fn(&[f64], u8) -> f64>(seed: u64, n: usize, d: usize, e: f64, noise: f64, f: F) -> Dataset {
    let mut r = rng(seed);
    let xs: Vec<Vec<f64>> = (0..d).map(|_| uniform(&mut r, n, -1.0, 1.0)).collect();
    let z = bernoulli(&mut r, &vec![e; n]);
    let y = (0..n)
        .map(|i| {
            let row: Vec<f64> = xs.iter().map(|c| c[i]).collect();
            f(&row, z[i]) + noise * normal(&mut r)
        })
        .collect();
    dataset(xs, z, y, None)
}

pub fn column(ds: &Dataset, name: &str) -> Vec<f64> {
    ds.table().column(name).unwrap().as_continuous().unwrap().to_vec()
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}
