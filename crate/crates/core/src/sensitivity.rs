//! Sensitivity of the matched-pairs signed-rank test to hidden bias: the
//! upper bound on the one-sided p-value when the odds of treatment within a
//! pair may differ by a factor of up to `gamma`.

use serde::{Deserialize, Serialize};

use crate::ate::MatchedPairs;
use crate::error::{Error, Result};
use crate::stats;

/// Largest number of nonzero pairs for which the exact null distribution is
/// computed.
pub const MAX_EXACT_PAIRS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMode {
    Exact,
    Normal,
    /// Exact when the number of nonzero pairs allows it, normal otherwise.
    Auto,
}

/// Signed-rank summary of a set of pair differences.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedRanks {
    /// Ranks of the nonzero absolute differences (average ranks for ties).
    pub ranks: Vec<f64>,
    pub positive: Vec<bool>,
    /// Sum of the ranks of positive differences.
    pub t_plus: f64,
}

impl SignedRanks {
    pub fn new(differences: &[f64]) -> Result<Self> {
        if differences.iter().any(|d| !d.is_finite()) {
            return Err(Error::Estimation("pair differences must be finite".into()));
        }
        let nz: Vec<f64> = differences.iter().copied().filter(|&d| d != 0.0).collect();
        if nz.is_empty() {
            return Err(Error::UndefinedTest("every pair difference is zero".into()));
        }
        let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
        let ranks = stats::average_ranks(&abs);
        let positive: Vec<bool> = nz.iter().map(|&d| d > 0.0).collect();
        let t_plus = ranks.iter().zip(&positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
        Ok(SignedRanks { ranks, positive, t_plus })
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

fn p_plus(gamma: f64) -> Result<f64> {
    if !(gamma >= 1.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("gamma must be a finite value >= 1, got {gamma}")));
    }
    Ok(gamma / (1.0 + gamma))
}

/// `P(T+ >= t_plus)` when each rank is counted independently with
/// probability `p`. Average ranks are multiples of 1/2, so the sum lives on
/// a lattice of doubled ranks.
fn exact_upper_tail(sr: &SignedRanks, p: f64) -> f64 {
    let doubled: Vec<usize> = sr.ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut dist = vec![0.0; total + 1];
    dist[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            let mass = dist[s];
            if mass != 0.0 {
                dist[s + r] += mass * p;
                dist[s] = mass * (1.0 - p);
            }
        }
        reach += r;
    }
    let t = (2.0 * sr.t_plus).round() as usize;
    dist[t..].iter().sum::<f64>().min(1.0)
}

fn normal_upper_tail(sr: &SignedRanks, p: f64) -> f64 {
    let sum_r: f64 = sr.ranks.iter().sum();
    let sum_r2: f64 = sr.ranks.iter().map(|r| r * r).sum();
    let mean = p * sum_r;
    let sd = (p * (1.0 - p) * sum_r2).sqrt();
    stats::normal_sf((sr.t_plus - 0.5 - mean) / sd)
}

/// Upper bound on the one-sided (positive effect) signed-rank p-value under
/// hidden bias of magnitude `gamma`.
pub fn sensitivity_bound(differences: &[f64], gamma: f64, mode: PValueMode) -> Result<f64> {
    let sr = SignedRanks::new(differences)?;
    bound_from_ranks(&sr, gamma, mode)
}

fn resolve(mode: PValueMode, s: usize) -> Result<bool> {
    match mode {
        PValueMode::Exact if s > MAX_EXACT_PAIRS => Err(Error::Mode(format!(
            "exact p-values support at most {MAX_EXACT_PAIRS} nonzero pairs, got {s}"
        ))),
        PValueMode::Exact => Ok(true),
        PValueMode::Normal => Ok(false),
        PValueMode::Auto => Ok(s <= MAX_EXACT_PAIRS),
    }
}

fn bound_from_ranks(sr: &SignedRanks, gamma: f64, mode: PValueMode) -> Result<f64> {
    let p = p_plus(gamma)?;
    Ok(if resolve(mode, sr.len())? { exact_upper_tail(sr, p) } else { normal_upper_tail(sr, p) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPoint {
    pub gamma: f64,
    pub p_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityResult {
    pub statistic: String,
    pub alpha: f64,
    pub exact: bool,
    pub n_pairs: usize,
    pub n_nonzero: usize,
    pub t_plus: f64,
    pub grid: Vec<GammaPoint>,
    /// Largest grid value whose upper-bound p-value stays below `alpha`.
    pub gamma_star: Option<f64>,
    /// `1 / gamma_star`.
    pub lower_odds: Option<f64>,
}

/// `1, 1 + step, ...` up to and including `max`.
pub fn gamma_grid(max: f64, step: f64) -> Result<Vec<f64>> {
    if !(max >= 1.0 && step > 0.0) {
        return Err(Error::Config("gamma grid needs max >= 1 and a positive step".into()));
    }
    let n = ((max - 1.0) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| 1.0 + k as f64 * step).collect())
}

pub fn gamma_star(differences: &[f64], alpha: f64, grid: &[f64], mode: PValueMode) -> Result<SensitivityResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} must lie in (0, 1)")));
    }
    if grid.first() != Some(&1.0) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("gamma grid must start at 1 and increase strictly".into()));
    }
    let sr = SignedRanks::new(differences)?;
    let exact = resolve(mode, sr.len())?;
    let points = grid
        .iter()
        .map(|&g| Ok(GammaPoint { gamma: g, p_upper: bound_from_ranks(&sr, g, mode)? }))
        .collect::<Result<Vec<_>>>()?;
    let gamma_star = points.iter().filter(|p| p.p_upper < alpha).map(|p| p.gamma).next_back();
    Ok(SensitivityResult {
        statistic: "wilcoxon_signed_rank".into(),
        alpha,
        exact,
        n_pairs: differences.len(),
        n_nonzero: sr.len(),
        t_plus: sr.t_plus,
        grid: points,
        gamma_star,
        lower_odds: gamma_star.map(|g| 1.0 / g),
    })
}

pub fn gamma_star_for_pairs(pairs: &MatchedPairs, alpha: f64, grid: &[f64], mode: PValueMode) -> Result<SensitivityResult> {
    gamma_star(&pairs.differences(), alpha, grid, mode)
}
