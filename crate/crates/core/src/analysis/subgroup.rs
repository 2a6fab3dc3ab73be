//! Subgroup definitions and subgroup-level average effects.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ate::{
    ate_from_values, ate_matching, cluster_bootstrap, match_pairs, AteEstimate, AteTag, BootstrapConfig,
};
use crate::data::{ClusterKey, Dataset, FeatureTable};
use crate::error::{Error, Result};
use crate::nuisance::{NuisanceModels, NuisanceValues};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    In,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::Eq => "=",
            Op::In => "in",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: String,
    pub op: Op,
    /// One value, or the members of the set for `in`.
    pub values: Vec<String>,
}

fn same_value(cell: &str, v: &str) -> bool {
    match (cell.trim().parse::<f64>(), v.trim().parse::<f64>()) {
        (Ok(a), Ok(b)) => a == b,
        _ => cell == v,
    }
}

impl Condition {
    fn holds(&self, table: &FeatureTable, row: usize) -> Result<bool> {
        let col = table.column(&self.feature)?;
        match self.op {
            Op::Eq | Op::In => {
                let cell = col.text_value(row);
                Ok(self.values.iter().any(|v| same_value(&cell, v)))
            }
            _ => {
                let x = col.numeric_value(row).ok_or_else(|| {
                    Error::Subgroup(format!("`{}` {} needs a numeric feature", self.feature, self.op))
                })?;
                let v: f64 = self.values[0]
                    .parse()
                    .map_err(|_| Error::Subgroup(format!("`{}` is not a number", self.values[0])))?;
                Ok(match self.op {
                    Op::Lt => x < v,
                    Op::Le => x <= v,
                    Op::Gt => x > v,
                    _ => x >= v,
                })
            }
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.op == Op::In {
            write!(f, "{} in {{{}}}", self.feature, self.values.join(", "))
        } else {
            write!(f, "{} {} {}", self.feature, self.op, self.values[0])
        }
    }
}

/// A conjunction of feature conditions over the raw features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupDef {
    pub label: String,
    pub conditions: Vec<Condition>,
}

impl SubgroupDef {
    /// Parse `feature op value [and ...]`, with `op` one of `<`, `<=`, `>`,
    /// `>=`, `=` and `in {a, b}`. The expression doubles as the label.
    pub fn parse(text: &str) -> Result<Self> {
        let mut conditions = Vec::new();
        for part in text.split(" and ").flat_map(|p| p.split('&')) {
            let part = part.trim();
            if part.is_empty() {
                return Err(Error::Subgroup(format!("empty condition in `{text}`")));
            }
            conditions.push(parse_condition(part)?);
        }
        Ok(SubgroupDef { label: text.trim().to_string(), conditions })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Membership of every row.
    pub fn mask(&self, table: &FeatureTable) -> Result<Vec<bool>> {
        (0..table.n_rows())
            .map(|i| {
                for c in &self.conditions {
                    if !c.holds(table, i)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            })
            .collect()
    }
}

fn parse_condition(s: &str) -> Result<Condition> {
    let bad = || Error::Subgroup(format!("cannot parse condition `{s}`"));
    if let Some(pos) = s.find(" in ") {
        let feature = s[..pos].trim().to_string();
        let set = s[pos + 4..].trim();
        let inner = set.strip_prefix('{').and_then(|r| r.strip_suffix('}')).ok_or_else(bad)?;
        let values: Vec<String> = inner.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if feature.is_empty() || values.is_empty() {
            return Err(bad());
        }
        return Ok(Condition { feature, op: Op::In, values });
    }
    let ops = [("<=", Op::Le), (">=", Op::Ge), ("≤", Op::Le), ("≥", Op::Ge), ("==", Op::Eq), ("<", Op::Lt), (">", Op::Gt), ("=", Op::Eq)];
    for (tok, op) in ops {
        if let Some(pos) = s.find(tok) {
            let feature = s[..pos].trim().to_string();
            let value = s[pos + tok.len()..].trim().to_string();
            if feature.is_empty() || value.is_empty() {
                return Err(bad());
            }
            if !matches!(op, Op::Eq) && value.parse::<f64>().is_err() {
                return Err(Error::Subgroup(format!("`{value}` is not a number in `{s}`")));
            }
            return Ok(Condition { feature, op, values: vec![value] });
        }
    }
    Err(bad())
}

/// Per-unit (or per-pair) contributions of one group, with their clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupScores {
    pub scores: Vec<f64>,
    pub clusters: Vec<ClusterKey>,
}

impl GroupScores {
    pub fn point(&self) -> f64 {
        stats::mean(&self.scores)
    }
}

/// Two-sided bootstrap p-value for equal group means: clusters of the union
/// are resampled, and the p-value is twice the share of replicates whose
/// difference has the opposite sign to the observed one, capped at 1.
pub fn subgroup_difference_test(a: &GroupScores, b: &GroupScores, boot: &BootstrapConfig) -> Result<f64> {
    boot.validate()?;
    if a.scores.is_empty() || b.scores.is_empty() {
        return Err(Error::Subgroup("both groups need at least one unit".into()));
    }
    let na = a.scores.len();
    let all: Vec<f64> = a.scores.iter().chain(&b.scores).copied().collect();
    let mut groups: BTreeMap<&ClusterKey, Vec<usize>> = BTreeMap::new();
    for (k, c) in a.clusters.iter().chain(&b.clusters).enumerate() {
        groups.entry(c).or_default().push(k);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    let observed = a.point() - b.point();
    let diff = |rows: &[usize]| -> Result<f64> {
        let (mut sa, mut ca, mut sb, mut cb) = (0.0, 0usize, 0.0, 0usize);
        for &r in rows {
            if r < na {
                sa += all[r];
                ca += 1;
            } else {
                sb += all[r];
                cb += 1;
            }
        }
        if ca == 0 || cb == 0 {
            return Err(Error::Subgroup("resample lost a group".into()));
        }
        Ok(sa / ca as f64 - sb / cb as f64)
    };
    let (reps, _) = cluster_bootstrap(&groups, boot, diff)?;
    if observed == 0.0 {
        return Ok(1.0);
    }
    let flips = reps.iter().filter(|&&d| d * observed.signum() <= 0.0).count();
    Ok((2.0 * flips as f64 / reps.len() as f64).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupComparison {
    pub label: String,
    pub subgroup: AteEstimate,
    pub complement: AteEstimate,
    /// Subgroup minus complement.
    pub difference: f64,
    pub p_value: f64,
}

/// Inputs for subgroup-level average effects.
pub struct SubgroupAteInputs<'a> {
    pub tag: AteTag,
    /// Required for IPW, REG and AIPW.
    pub nuisance: Option<&'a NuisanceModels>,
    /// Required for matching.
    pub matching_features: &'a [String],
    pub boot: BootstrapConfig,
}

fn split_sides(ds: &Dataset, def: &SubgroupDef) -> Result<(Vec<usize>, Vec<usize>)> {
    let mask = def.mask(ds.table())?;
    let inside: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let outside: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
    if inside.is_empty() {
        return Err(Error::Subgroup(format!("subgroup `{}` is empty", def.label)));
    }
    if outside.is_empty() {
        return Err(Error::Subgroup(format!("complement of `{}` is empty", def.label)));
    }
    Ok((inside, outside))
}

fn side_dataset(ds: &Dataset, rows: &[usize], side: &str, label: &str) -> Result<Dataset> {
    ds.subset(rows).map_err(|e| Error::Subgroup(format!("{side} of `{label}`: {e}")))
}

fn pick(v: &NuisanceValues, rows: &[usize]) -> NuisanceValues {
    let p = |x: &[f64]| rows.iter().map(|&i| x[i]).collect();
    NuisanceValues { mu0: p(&v.mu0), mu1: p(&v.mu1), e: p(&v.e), e_raw: p(&v.e_raw) }
}

fn side_estimate(ds: &Dataset, rows: &[usize], side: &str, label: &str, inp: &SubgroupAteInputs, v: Option<&NuisanceValues>) -> Result<(AteEstimate, GroupScores)> {
    let part = side_dataset(ds, rows, side, label)?;
    match inp.tag {
        AteTag::MATCH => {
            let pairs = match_pairs(&part, inp.matching_features)?;
            let est = ate_matching(&pairs, &inp.boot)?;
            let scores = GroupScores {
                scores: pairs.differences(),
                clusters: pairs.pairs.iter().map(|p| p.cluster.clone()).collect(),
            };
            Ok((est, scores))
        }
        tag => {
            let v = pick(v.expect("nuisance values present"), rows);
            let est = ate_from_values(tag, &part, &v, &inp.boot)?;
            let (z, y) = (part.treatment(), part.outcome());
            let scores = (0..part.n_rows())
                .map(|i| match tag {
                    AteTag::IPW => crate::ate::ipw_score(z[i], y[i], v.e[i]),
                    AteTag::REG => crate::ate::regression_score(v.mu0[i], v.mu1[i]),
                    _ => crate::ate::aipw_score(z[i], y[i], v.e[i], v.mu0[i], v.mu1[i]) / 2.0,
                })
                .collect();
            let clusters = (0..part.n_rows()).map(|i| part.table().cluster_key(i)).collect();
            Ok((est, GroupScores { scores, clusters }))
        }
    }
}

fn sides(ds: &Dataset, def: &SubgroupDef, inp: &SubgroupAteInputs) -> Result<[(AteEstimate, GroupScores); 2]> {
    let (inside, outside) = split_sides(ds, def)?;
    let values = match inp.tag {
        AteTag::MATCH => None,
        _ => {
            let nm = inp.nuisance.ok_or_else(|| Error::Config(format!("{} needs nuisance models", inp.tag)))?;
            Some(nm.training_values(ds)?)
        }
    };
    Ok([
        side_estimate(ds, &inside, "subgroup", &def.label, inp, values.as_ref())?,
        side_estimate(ds, &outside, "complement", &def.label, inp, values.as_ref())?,
    ])
}

/// Average effect inside the subgroup and in its complement.
pub fn subgroup_ate(ds: &Dataset, def: &SubgroupDef, inp: &SubgroupAteInputs) -> Result<(AteEstimate, AteEstimate)> {
    let [(a, _), (b, _)] = sides(ds, def, inp)?;
    Ok((a, b))
}

/// Subgroup and complement effects plus the bootstrap test of equality.
pub fn compare_subgroup(ds: &Dataset, def: &SubgroupDef, inp: &SubgroupAteInputs) -> Result<SubgroupComparison> {
    let [(a, sa), (b, sb)] = sides(ds, def, inp)?;
    let test_boot = BootstrapConfig { seed: crate::seeding::derive_seed(inp.boot.seed, 1), ..inp.boot };
    let p_value = subgroup_difference_test(&sa, &sb, &test_boot)?;
    Ok(SubgroupComparison { label: def.label.clone(), difference: a.point - b.point, subgroup: a, complement: b, p_value })
}
