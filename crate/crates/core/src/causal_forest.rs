//! Honest causal forest: trees split to separate treatment effects and
//! predict with leaf-level difference-in-means.

use ndarray::ArrayView2;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::base_learners::tree::Columns;
use crate::data::{Dataset, EncodingPlan};
use crate::error::{Error, Result};
use crate::meta_learners::{CateKind, CateModel, CateParts};
use crate::seeding::{derive_seed, par_map, rng, Rng};

fn default_half() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CausalForestSpec {
    pub n_trees: usize,
    pub min_leaf_treated: usize,
    pub min_leaf_control: usize,
    /// Features examined per node; all when `None`.
    #[serde(default)]
    pub mtry: Option<usize>,
    #[serde(default = "default_half")]
    pub subsample: f64,
    #[serde(default = "default_true")]
    pub honest: bool,
    #[serde(default = "default_half")]
    pub honesty_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CausalForestSpec {
    fn default() -> Self {
        CausalForestSpec {
            n_trees: 500,
            min_leaf_treated: 5,
            min_leaf_control: 5,
            mtry: None,
            subsample: 0.5,
            honest: true,
            honesty_fraction: 0.5,
            seed: 0,
        }
    }
}

impl CausalForestSpec {
    pub fn with_trees(mut self, n_trees: usize) -> Self {
        self.n_trees = n_trees;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("causal forest: {m}")));
        if self.n_trees == 0 {
            return bad("n_trees must be positive");
        }
        if self.min_leaf_treated < 2 || self.min_leaf_control < 2 {
            return bad("per-arm leaf minimums must be at least 2");
        }
        if self.mtry == Some(0) {
            return bad("mtry must be positive");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample fraction must lie in (0, 1]");
        }
        if self.honest && !(self.honesty_fraction > 0.0 && self.honesty_fraction < 1.0) {
            return bad("honesty fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { value: f64, n_treated: usize, n_control: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalTree {
    nodes: Vec<Node>,
}

impl CausalTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value, .. } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    k = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    /// Estimation-sample `(treated, control)` counts of every leaf.
    pub fn leaf_counts(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { n_treated, n_control, .. } => Some((*n_treated, *n_control)),
                Node::Split { .. } => None,
            })
            .collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_counts().len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalForest {
    n_cols: usize,
    trees: Vec<CausalTree>,
}

impl CausalForest {
    pub fn trees(&self) -> &[CausalTree] {
        &self.trees
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let mut row = vec![0.0; x.ncols()];
        x.rows()
            .into_iter()
            .map(|r| {
                row.iter_mut().zip(r.iter()).for_each(|(a, b)| *a = *b);
                self.trees.iter().map(|t| t.predict_row(&row)).sum::<f64>() / self.trees.len() as f64
            })
            .collect()
    }
}

/// Structure and estimation rows of one tree.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Halves {
    pub structure: Vec<usize>,
    pub estimation: Vec<usize>,
}

fn take(n: usize, frac: f64) -> usize {
    ((n as f64 * frac).round() as usize).clamp(1, n)
}

/// Arm-stratified subsample, then an arm-stratified honesty split.
pub(crate) fn draw_halves(treated: &[usize], control: &[usize], spec: &CausalForestSpec, rng: &mut Rng) -> Halves {
    let mut structure = Vec::new();
    let mut estimation = Vec::new();
    for arm in [treated, control] {
        let mut rows = arm.to_vec();
        rows.shuffle(rng);
        rows.truncate(take(arm.len(), spec.subsample));
        if spec.honest {
            let k = ((rows.len() as f64) * spec.honesty_fraction).round() as usize;
            let (s, e) = rows.split_at(k.min(rows.len()));
            structure.extend_from_slice(s);
            estimation.extend_from_slice(e);
        } else {
            structure.extend_from_slice(&rows);
            estimation.extend_from_slice(&rows);
        }
    }
    structure.sort_unstable();
    estimation.sort_unstable();
    Halves { structure, estimation }
}

#[derive(Default, Clone, Copy)]
struct ArmSums {
    n1: usize,
    s1: f64,
    n0: usize,
    s0: f64,
}

impl ArmSums {
    fn add(&mut self, z: u8, y: f64) {
        if z == 1 {
            self.n1 += 1;
            self.s1 += y;
        } else {
            self.n0 += 1;
            self.s0 += y;
        }
    }

    fn minus(&self, o: &ArmSums) -> ArmSums {
        ArmSums { n1: self.n1 - o.n1, s1: self.s1 - o.s1, n0: self.n0 - o.n0, s0: self.s0 - o.s0 }
    }

    fn tau(&self) -> f64 {
        self.s1 / self.n1 as f64 - self.s0 / self.n0 as f64
    }

    fn feasible(&self, spec: &CausalForestSpec) -> bool {
        self.n1 >= spec.min_leaf_treated && self.n0 >= spec.min_leaf_control
    }
}

fn sums(rows: &[usize], z: &[u8], y: &[f64]) -> ArmSums {
    let mut a = ArmSums::default();
    for &i in rows {
        a.add(z[i], y[i]);
    }
    a
}

fn grow(cols: &Columns, z: &[u8], y: &[f64], halves: Halves, spec: &CausalForestSpec, rng: &mut Rng) -> CausalTree {
    let d = cols.n_cols();
    let mut nodes = vec![Node::Leaf { value: 0.0, n_treated: 0, n_control: 0 }];
    let mut stack = vec![(halves.structure, halves.estimation, 0usize)];
    // (value, row, is_structure)
    let mut buf: Vec<(f64, usize, bool)> = Vec::new();

    while let Some((srows, erows, slot)) = stack.pop() {
        let est = sums(&erows, z, y);
        nodes[slot] = Node::Leaf { value: est.tau(), n_treated: est.n1, n_control: est.n0 };
        let st = sums(&srows, z, y);

        let features: Vec<usize> = match spec.mtry {
            Some(m) if m < d => {
                let mut f = index::sample(rng, d, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        };

        let mut best: Option<(usize, f64, f64)> = None;
        for &f in &features {
            buf.clear();
            buf.extend(srows.iter().map(|&i| (cols.get(i, f), i, true)));
            buf.extend(erows.iter().map(|&i| (cols.get(i, f), i, false)));
            buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut sl = ArmSums::default();
            let mut el = ArmSums::default();
            for p in 0..buf.len().saturating_sub(1) {
                let (v, i, is_s) = buf[p];
                if is_s {
                    sl.add(z[i], y[i]);
                } else {
                    el.add(z[i], 0.0);
                }
                if v == buf[p + 1].0 {
                    continue;
                }
                let sr = st.minus(&sl);
                let er = ArmSums { n1: est.n1 - el.n1, n0: est.n0 - el.n0, ..Default::default() };
                if !(sl.feasible(spec) && sr.feasible(spec) && el.feasible(spec) && er.feasible(spec)) {
                    continue;
                }
                let nl = (sl.n1 + sl.n0) as f64;
                let nr = (sr.n1 + sr.n0) as f64;
                let diff = sl.tau() - sr.tau();
                let score = nl * nr * diff * diff;
                if best.is_none_or(|b| score > b.2) {
                    let hi = buf[p + 1].0;
                    let mut threshold = v + (hi - v) / 2.0;
                    if threshold >= hi {
                        threshold = v;
                    }
                    best = Some((f, threshold, score));
                }
            }
        }

        let Some((feature, threshold, score)) = best else { continue };
        if score <= 0.0 {
            continue;
        }
        let goes_left = |&&i: &&usize| cols.get(i, feature) <= threshold;
        let (sl, sr): (Vec<usize>, Vec<usize>) = srows.iter().partition(goes_left);
        let (el, er): (Vec<usize>, Vec<usize>) = erows.iter().partition(goes_left);
        let l = nodes.len();
        nodes.push(Node::Leaf { value: 0.0, n_treated: 0, n_control: 0 });
        nodes.push(Node::Leaf { value: 0.0, n_treated: 0, n_control: 0 });
        nodes[slot] = Node::Split { feature, threshold, left: l, right: l + 1 };
        stack.push((sr, er, l + 1));
        stack.push((sl, el, l));
    }
    CausalTree { nodes }
}

/// Grow the forest on an encoded design matrix.
pub fn fit_forest_encoded(x: ArrayView2<f64>, z: &[u8], y: &[f64], spec: &CausalForestSpec) -> Result<CausalForest> {
    spec.validate()?;
    if x.nrows() != z.len() || x.nrows() != y.len() {
        return Err(Error::Shape("design, treatment and outcome lengths differ".into()));
    }
    let treated: Vec<usize> = (0..z.len()).filter(|&i| z[i] == 1).collect();
    let control: Vec<usize> = (0..z.len()).filter(|&i| z[i] == 0).collect();
    if treated.is_empty() || control.is_empty() {
        return Err(Error::Fit("both treatment arms must be non-empty".into()));
    }
    // Half sizes depend only on arm counts, so one draw decides feasibility.
    let probe = draw_halves(&treated, &control, spec, &mut rng(spec.seed));
    let root_ok = |rows: &[usize]| sums(rows, z, y).feasible(spec);
    if !root_ok(&probe.structure) || !root_ok(&probe.estimation) {
        return Err(Error::Fit(format!(
            "causal forest needs at least {} treated and {} control units in each half of every subsample",
            spec.min_leaf_treated, spec.min_leaf_control
        )));
    }
    let cols = Columns::from_view(&x);
    let trees = par_map(spec.n_trees, |t| {
        let mut r = rng(derive_seed(spec.seed, t as u64));
        let halves = draw_halves(&treated, &control, spec, &mut r);
        grow(&cols, z, y, halves, spec, &mut r)
    });
    Ok(CausalForest { n_cols: x.ncols(), trees })
}

pub fn fit_causal_forest(ds: &Dataset, spec: &CausalForestSpec, include_cluster: bool) -> Result<CateModel> {
    let plan = EncodingPlan::fit(ds.table(), include_cluster)?;
    let x = plan.apply(ds.table())?;
    let forest = fit_forest_encoded(x.view(), ds.treatment(), ds.outcome(), spec)?;
    Ok(CateModel::new(CateKind::CF, "forest", plan, CateParts::Forest(forest), Some(ds)))
}
