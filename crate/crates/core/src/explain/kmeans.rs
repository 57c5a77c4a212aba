use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

const MAX_ITER: usize = 100;
const SHIFT_TOL: f64 = 1e-6;

/// Weighted reference rows that stand in for "feature absent".
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundSet {
    /// Raw-scale rows, `k × width`.
    pub rows: DMatrix<f64>,
    /// Sums to one.
    pub weights: Vec<f64>,
}

impl BackgroundSet {
    /// Uniformly weighted rows.
    pub fn uniform(rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::InvalidInput("empty background".into()));
        }
        let w = 1.0 / rows.nrows() as f64;
        Ok(Self {
            weights: vec![w; rows.nrows()],
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.rows.ncols()
    }
}

/// Runs k-means separately on every country's rows and pools the
/// centroids, `per_country` from each.
///
/// Distances are measured on globally z-scored columns so that large-valued
/// targets do not dominate; centroids are reported on the raw scale.
pub fn kmeans_background(matrix: &FeatureMatrix, per_country: usize, seed: u64) -> Result<BackgroundSet> {
    if per_country == 0 {
        return Err(Error::InvalidInput("per_country must be positive".into()));
    }
    let (n, d) = matrix.x.shape();
    let mut scale = vec![1.0; d];
    for (j, s) in scale.iter_mut().enumerate() {
        let col = matrix.x.column(j);
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1) as f64).sqrt();
        if sd > 0.0 {
            *s = sd;
        }
    }

    let mut centroids = Vec::new();
    for c in 0..matrix.countries.len() {
        let idx = matrix.country_rows(c);
        if idx.len() < per_country {
            return Err(Error::NotEnoughRows(format!(
                "country {} has {} rows, need {per_country} for the background",
                matrix.countries[c],
                idx.len()
            )));
        }
        let points = DMatrix::from_fn(idx.len(), d, |r, j| matrix.x[(idx[r], j)] / scale[j]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(c as u64));
        let centers = kmeans(&points, per_country, &mut rng);
        for row in centers.row_iter() {
            centroids.push(row.iter().zip(&scale).map(|(v, s)| v * s).collect::<Vec<_>>());
        }
    }
    let k = centroids.len();
    BackgroundSet::uniform(DMatrix::from_fn(k, d, |r, j| centroids[r][j]))
}

/// Lloyd's algorithm with k-means++ seeding. Ties go to the lower index and
/// clusters that lose all points keep their previous center.
pub fn kmeans<R: Rng>(points: &DMatrix<f64>, k: usize, rng: &mut R) -> DMatrix<f64> {
    let (n, d) = points.shape();
    let dist2 =
        |r: usize, c: &DMatrix<f64>, i: usize| -> f64 { (0..d).map(|j| (points[(r, j)] - c[(i, j)]).powi(2)).sum() };

    let mut centers: DMatrix<f64> = DMatrix::zeros(k, d);
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from(&points.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|r| dist2(r, &centers, 0)).collect();
    for i in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (r, &w) in nearest.iter().enumerate() {
                if u < w {
                    chosen = r;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(i).copy_from(&points.row(pick));
        for (r, best) in nearest.iter_mut().enumerate() {
            *best = best.min(dist2(r, &centers, i));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..MAX_ITER {
        for (r, a) in assign.iter_mut().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for i in 0..k {
                let dd = dist2(r, &centers, i);
                if dd < best.0 {
                    best = (dd, i);
                }
            }
            *a = best.1;
        }
        let mut sums: DMatrix<f64> = DMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (r, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for j in 0..d {
                sums[(a, j)] += points[(r, j)];
            }
        }
        let mut shift = 0.0_f64;
        for i in 0..k {
            if counts[i] == 0 {
                continue;
            }
            for j in 0..d {
                let v = sums[(i, j)] / counts[i] as f64;
                shift = shift.max((v - centers[(i, j)]).abs());
                centers[(i, j)] = v;
            }
        }
        if shift < SHIFT_TOL {
            break;
        }
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let c = kmeans(&pts, 1, &mut ChaCha8Rng::seed_from_u64(0));
        assert!((c[(0, 0)] - 3.0).abs() < 1e-12);
        assert!((c[(0, 1)] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn already_clustered_points_are_recovered() {
        let sites = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0], [5.0, 20.0]];
        let pts = DMatrix::from_fn(20, 2, |r, j| sites[r % 5][j]);
        let c = kmeans(&pts, 5, &mut ChaCha8Rng::seed_from_u64(3));
        let mut got: Vec<(i64, i64)> = c.row_iter().map(|r| (r[0] as i64, r[1] as i64)).collect();
        got.sort_unstable();
        let mut want: Vec<(i64, i64)> = sites.iter().map(|s| (s[0] as i64, s[1] as i64)).collect();
        want.sort_unstable();
        assert_eq!(got, want);
    }

    #[test]
    fn degenerate_points_do_not_panic() {
        let pts = DMatrix::from_element(6, 3, 2.0);
        let c = kmeans(&pts, 4, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(c.iter().all(|&v| v == 2.0));
    }
}
