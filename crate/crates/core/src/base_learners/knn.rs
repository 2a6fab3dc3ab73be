use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{column_scaling, map_rows, Prepared};

/// Weighted k-nearest-neighbour regression in standardised Euclidean
/// distance. Distance ties go to the lower training row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NearestNeighbors {
    k: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Standardised training rows, row-major.
    points: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl NearestNeighbors {
    pub(crate) fn fit(x: &ArrayView2<f64>, y: &[f64], prep: &Prepared, k: usize) -> Self {
        let (mean, scale) = column_scaling(x, &prep.rows);
        let d = x.ncols();
        let mut points = Vec::with_capacity(prep.rows.len() * d);
        for &i in &prep.rows {
            for j in 0..d {
                points.push((x[[i, j]] - mean[j]) / scale[j]);
            }
        }
        NearestNeighbors {
            k: k.min(prep.rows.len()),
            mean,
            scale,
            points,
            y: prep.rows.iter().map(|&i| y[i]).collect(),
            w: prep.rows.iter().map(|&i| prep.w[i]).collect(),
        }
    }

    pub(crate) fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let d = self.mean.len();
        let n = self.y.len();
        let mut q = vec![0.0; d];
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
        map_rows(x, |row| {
            for j in 0..d {
                q[j] = (row[j] - self.mean[j]) / self.scale[j];
            }
            dist.clear();
            dist.extend((0..n).map(|i| {
                let p = &self.points[i * d..(i + 1) * d];
                (p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i)
            }));
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if self.k < n {
                dist.select_nth_unstable_by(self.k - 1, cmp);
            }
            let nearest = &mut dist[..self.k];
            nearest.sort_unstable_by(cmp);
            let (sw, swy) = nearest.iter().fold((0.0, 0.0), |(a, b), &(_, i)| (a + self.w[i], b + self.w[i] * self.y[i]));
            swy / sw
        })
    }
}
