//! Weighted least-squares regression tree (CART) shared by the single tree,
//! random forest and boosting learners.

use ndarray::ArrayView2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::seeding::Rng;

/// Feature matrix stored column-major for split sweeps.
pub(crate) struct Columns {
    cols: Vec<Vec<f64>>,
}

impl Columns {
    pub(crate) fn from_view(x: &ArrayView2<f64>) -> Self {
        let cols = x.columns().into_iter().map(|c| c.to_vec()).collect();
        Columns { cols }
    }

    pub(crate) fn n_cols(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub(crate) fn get(&self, row: usize, col: usize) -> f64 {
        self.cols[col][row]
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per node; all when `None`.
    pub mtry: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl RegressionTree {
    /// Grow a tree on `rows` (duplicates allowed, as in a bootstrap sample).
    /// Splits maximise the weighted squared-error reduction; candidate
    /// thresholds are midpoints of consecutive distinct values and the first
    /// best split in column order wins ties.
    pub(crate) fn grow(
        cols: &Columns,
        y: &[f64],
        w: &[f64],
        rows: Vec<usize>,
        params: GrowParams,
        mut rng: Option<&mut Rng>,
    ) -> Self {
        let d = cols.n_cols();
        let mut nodes = Vec::new();
        let mut buf: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        // (rows, depth, node slot)
        let mut stack = vec![(rows, 0usize, 0usize)];
        nodes.push(Node::Leaf { value: 0.0 });

        while let Some((rows, depth, slot)) = stack.pop() {
            let (sw, swy, swyy) = rows.iter().fold((0.0, 0.0, 0.0), |(a, b, c), &i| {
                (a + w[i], b + w[i] * y[i], c + w[i] * y[i] * y[i])
            });
            let value = swy / sw;
            nodes[slot] = Node::Leaf { value };

            let impurity = swyy - swy * swy / sw;
            if depth >= params.max_depth
                || rows.len() < 2 * params.min_leaf
                || impurity <= 1e-12 * swyy.abs().max(f64::MIN_POSITIVE)
            {
                continue;
            }

            let features: Vec<usize> = match (params.mtry, rng.as_deref_mut()) {
                (Some(m), Some(r)) if m < d => {
                    let mut f = index::sample(r, d, m).into_vec();
                    f.sort_unstable();
                    f
                }
                _ => (0..d).collect(),
            };

            let parent_score = swy * swy / sw;
            let mut best: Option<Candidate> = None;
            for &f in &features {
                buf.clear();
                buf.extend(rows.iter().map(|&i| (cols.get(i, f), i)));
                buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                if buf[0].0 == buf[buf.len() - 1].0 {
                    continue;
                }
                let (mut wl, mut sl) = (0.0, 0.0);
                let m = buf.len();
                for p in 0..m - 1 {
                    let i = buf[p].1;
                    wl += w[i];
                    sl += w[i] * y[i];
                    let nl = p + 1;
                    if buf[p].0 == buf[p + 1].0 || nl < params.min_leaf || m - nl < params.min_leaf {
                        continue;
                    }
                    let wr = sw - wl;
                    let sr = swy - sl;
                    if wl <= 0.0 || wr <= 0.0 {
                        continue;
                    }
                    let score = sl * sl / wl + sr * sr / wr;
                    if best.as_ref().is_none_or(|b| score > b.score) {
                        let lo = buf[p].0;
                        let hi = buf[p + 1].0;
                        let mut threshold = lo + (hi - lo) / 2.0;
                        if threshold >= hi {
                            threshold = lo;
                        }
                        best = Some(Candidate { feature: f, threshold, score });
                    }
                }
            }

            let Some(best) = best else { continue };
            if best.score - parent_score <= 0.0 {
                continue;
            }
            let (left, right): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| cols.get(i, best.feature) <= best.threshold);
            let l = nodes.len();
            nodes.push(Node::Leaf { value });
            nodes.push(Node::Leaf { value });
            nodes[slot] = Node::Split { feature: best.feature, threshold: best.threshold, left: l, right: l + 1 };
            stack.push((right, depth + 1, l + 1));
            stack.push((left, depth + 1, l));
        }
        RegressionTree { nodes }
    }

    fn leaf_of<F: Fn(usize) -> f64>(&self, feature: F) -> usize {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { .. } => return k,
                Node::Split { feature: f, threshold, left, right } => {
                    k = if feature(*f) <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match &self.nodes[self.leaf_of(|f| row[f])] {
            Node::Leaf { value } => *value,
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Replace leaf values by weighted means of `rows`; leaves that receive
    /// no rows keep their current value.
    pub(crate) fn reestimate_leaves(&mut self, cols: &Columns, y: &[f64], w: &[f64], rows: &[usize]) {
        let mut acc = vec![(0.0, 0.0); self.nodes.len()];
        for &i in rows {
            let leaf = self.leaf_of(|f| cols.get(i, f));
            acc[leaf].0 += w[i];
            acc[leaf].1 += w[i] * y[i];
        }
        for (node, (sw, swy)) in self.nodes.iter_mut().zip(acc) {
            if let Node::Leaf { value } = node {
                if sw > 0.0 {
                    *value = swy / sw;
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], k: usize) -> usize {
            match &nodes[k] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}
