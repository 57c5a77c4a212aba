use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::kmeans::BackgroundSet;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, RowKey};
use crate::model::Predictor;

/// Largest feature count explained by full coalition enumeration.
pub const EXACT_MAX_FEATURES: usize = 12;

/// Bound on rows sent to the model in one call.
const EVAL_CHUNK_ROWS: usize = 65_536;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ShapOptions {
    /// Sampled coalitions for the approximate path; `None` means `2d + 2048`.
    pub n_coalitions: Option<usize>,
    /// Use the sampling path even when enumeration is feasible.
    pub force_sampling: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapResult {
    /// Background-weighted mean prediction.
    pub base_value: f64,
    pub phi: Vec<f64>,
    pub prediction: f64,
    pub exact: bool,
}

/// Shapley kernel weight of a coalition of size `s` among `d` features.
pub fn shapley_kernel(d: usize, s: usize) -> f64 {
    if s == 0 || s == d {
        return f64::INFINITY;
    }
    (d - 1) as f64 / (binomial(d, s) * s as f64 * (d - s) as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Kernel SHAP attributions of one raw row.
///
/// Features outside a coalition take their values from each background row
/// and the predictions are averaged with the background weights. The
/// efficiency constraint `Σφ = f(x) − base` is enforced by eliminating the
/// last attribution before the weighted least-squares solve.
pub fn kernel_shap(
    model: &dyn Predictor,
    row: &[f64],
    background: &BackgroundSet,
    opts: &ShapOptions,
    seed: u64,
) -> Result<ShapResult> {
    let d = row.len();
    if d == 0 || background.width() != d || model.input_width() != d {
        return Err(Error::WidthMismatch {
            expected: model.input_width(),
            actual: d,
        });
    }
    let exact = d <= EXACT_MAX_FEATURES && !opts.force_sampling;
    let coalitions: Vec<(Vec<bool>, f64)> = if exact {
        enumerate_coalitions(d)
    } else {
        let n = opts.n_coalitions.unwrap_or(2 * d + 2048);
        if n < d + 2 {
            return Err(Error::InvalidInput(format!(
                "{n} coalitions cannot identify {d} attributions; use at least {}",
                d + 2
            )));
        }
        sample_coalitions(d, n, &mut ChaCha8Rng::seed_from_u64(seed))
    };

    let mut masks: Vec<Vec<bool>> = vec![vec![false; d], vec![true; d]];
    masks.extend(coalitions.iter().map(|(z, _)| z.clone()));
    let values = coalition_values(model, row, background, &masks)?;
    let (base, full) = (values[0], values[1]);
    let delta = full - base;
    if d == 1 {
        return Ok(ShapResult {
            base_value: base,
            phi: vec![delta],
            prediction: full,
            exact,
        });
    }

    // v(z) − base − z_d·Δ = Σ_{i<d} (z_i − z_d) φ_i
    let m = coalitions.len();
    let mut a = DMatrix::zeros(m, d - 1);
    let mut b = DVector::zeros(m);
    for (r, ((z, w), v)) in coalitions.iter().zip(&values[2..]).enumerate() {
        let sw = w.sqrt();
        let zd = f64::from(u8::from(z[d - 1]));
        for i in 0..d - 1 {
            a[(r, i)] = sw * (f64::from(u8::from(z[i])) - zd);
        }
        b[r] = sw * (v - base - zd * delta);
    }
    let phi_head = solve_wls(a, b, m)?;
    let mut phi: Vec<f64> = phi_head.iter().copied().collect();
    phi.push(delta - phi.iter().sum::<f64>());
    Ok(ShapResult {
        base_value: base,
        phi,
        prediction: full,
        exact,
    })
}

fn solve_wls(a: DMatrix<f64>, b: DVector<f64>, m: usize) -> Result<DVector<f64>> {
    let p = a.ncols();
    let singular = || {
        Error::Singular(format!(
            "weighted SHAP system with {m} coalitions is rank deficient; raise n_coalitions"
        ))
    };
    if m < p {
        return Err(singular());
    }
    let qr = a.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..p).any(|i| r[(i, i)].abs() <= 1e-12 * max_diag) || max_diag == 0.0 {
        return Err(singular());
    }
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb).ok_or_else(singular)
}

/// All proper non-empty coalitions with their kernel weights.
fn enumerate_coalitions(d: usize) -> Vec<(Vec<bool>, f64)> {
    (1..(1u32 << d) - 1)
        .map(|mask| {
            let z: Vec<bool> = (0..d).map(|i| mask >> i & 1 == 1).collect();
            let s = mask.count_ones() as usize;
            (z, shapley_kernel(d, s))
        })
        .collect()
}

/// Paired sampling: sizes drawn from the kernel's size distribution, each
/// subset followed by its complement. Samples carry unit weight because the
/// kernel is already reflected in the sampling probabilities.
fn sample_coalitions<R: Rng>(d: usize, n: usize, rng: &mut R) -> Vec<(Vec<bool>, f64)> {
    let size_w: Vec<f64> = (1..d).map(|s| (d - 1) as f64 / (s * (d - s)) as f64).collect();
    let total: f64 = size_w.iter().sum();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut u = rng.random::<f64>() * total;
        let mut s = d - 1;
        for (i, w) in size_w.iter().enumerate() {
            if u < *w {
                s = i + 1;
                break;
            }
            u -= w;
        }
        let mut z = vec![false; d];
        for i in sample(rng, d, s) {
            z[i] = true;
        }
        let complement: Vec<bool> = z.iter().map(|v| !v).collect();
        out.push((z, 1.0));
        if out.len() < n {
            out.push((complement, 1.0));
        }
    }
    out
}

/// Background-averaged predictions for each coalition mask.
fn coalition_values(
    model: &dyn Predictor,
    row: &[f64],
    background: &BackgroundSet,
    masks: &[Vec<bool>],
) -> Result<Vec<f64>> {
    let d = row.len();
    let k = background.len();
    let per_chunk = (EVAL_CHUNK_ROWS / k).max(1);
    let mut values = Vec::with_capacity(masks.len());
    for chunk in masks.chunks(per_chunk) {
        let x = DMatrix::from_fn(chunk.len() * k, d, |r, j| {
            if chunk[r / k][j] {
                row[j]
            } else {
                background.rows[(r % k, j)]
            }
        });
        let pred = model.predict_rows(&x)?;
        for c in 0..chunk.len() {
            values.push((0..k).map(|b| background.weights[b] * pred[c * k + b]).sum::<f64>());
        }
    }
    Ok(values)
}

/// Per-row attributions and the global mean-|φ| ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapSummary {
    pub features: Vec<String>,
    pub rows: Vec<RowKey>,
    /// `rows × features`
    pub phi: Vec<Vec<f64>>,
    pub base_value: f64,
    pub mean_abs_phi: Vec<f64>,
    /// Feature indices by decreasing mean |φ|.
    pub ranking: Vec<usize>,
}

/// Explains the listed rows of `matrix` (row `i` uses seed `seed + i`).
pub fn shap_summary(
    model: &dyn Predictor,
    matrix: &FeatureMatrix,
    rows: &[usize],
    background: &BackgroundSet,
    opts: &ShapOptions,
    seed: u64,
) -> Result<ShapSummary> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("no rows to explain".into()));
    }
    let results: Vec<ShapResult> = rows
        .par_iter()
        .map(|&r| {
            let row: Vec<f64> = matrix.x.row(r).iter().copied().collect();
            kernel_shap(model, &row, background, opts, seed.wrapping_add(r as u64))
        })
        .collect::<Result<_>>()?;
    let d = matrix.n_cols();
    let mut mean_abs_phi = vec![0.0; d];
    for res in &results {
        for (acc, p) in mean_abs_phi.iter_mut().zip(&res.phi) {
            *acc += p.abs();
        }
    }
    for v in &mut mean_abs_phi {
        *v /= results.len() as f64;
    }
    let mut ranking: Vec<usize> = (0..d).collect();
    ranking.sort_by(|&a, &b| mean_abs_phi[b].total_cmp(&mean_abs_phi[a]).then(a.cmp(&b)));
    Ok(ShapSummary {
        features: matrix.columns.iter().map(|c| c.label()).collect(),
        rows: rows.iter().map(|&r| matrix.rows[r]).collect(),
        base_value: results[0].base_value,
        phi: results.into_iter().map(|r| r.phi).collect(),
        mean_abs_phi,
        ranking,
    })
}

impl ShapSummary {
    /// `feature,mean_abs_phi,rank` sorted by rank (1 = most important).
    pub fn write_summary_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut w = crate::csvout::Writer::create(path, comment)?;
        w.record(["feature", "mean_abs_phi", "rank"])?;
        for (rank, &j) in self.ranking.iter().enumerate() {
            w.record(&[
                self.features[j].clone(),
                self.mean_abs_phi[j].to_string(),
                (rank + 1).to_string(),
            ])?;
        }
        w.finish()
    }

    /// Long format: `country,year,month,feature,phi`.
    pub fn write_values_csv(&self, path: &Path, countries: &[String], comment: Option<&str>) -> Result<()> {
        let mut w = crate::csvout::Writer::create(path, comment)?;
        w.record(["country", "year", "month", "feature", "phi"])?;
        for (key, phi) in self.rows.iter().zip(&self.phi) {
            for (f, p) in self.features.iter().zip(phi) {
                w.record(&[
                    countries[key.country].clone(),
                    key.year.to_string(),
                    crate::dataio::calendar_month(key.month_j).to_string(),
                    f.clone(),
                    p.to_string(),
                ])?;
            }
        }
        w.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear {
        w: Vec<f64>,
        b: f64,
    }

    impl Predictor for Linear {
        fn predict_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
            Ok(x.row_iter()
                .map(|r| r.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() + self.b)
                .collect())
        }

        fn input_width(&self) -> usize {
            self.w.len()
        }
    }

    #[test]
    fn kernel_weights() {
        assert!((shapley_kernel(4, 1) - 3.0 / (4.0 * 3.0)).abs() < 1e-15);
        assert!((shapley_kernel(4, 2) - 3.0 / (6.0 * 4.0)).abs() < 1e-15);
        assert!(shapley_kernel(4, 0).is_infinite());
    }

    #[test]
    fn linear_model_exact_path() {
        let model = Linear {
            w: vec![2.0, -1.0, 0.5, 0.0],
            b: 3.0,
        };
        let bg = BackgroundSet::uniform(DMatrix::from_row_slice(
            3,
            4,
            &[0.0, 1.0, 2.0, 3.0, 1.0, -1.0, 0.0, 2.0, 2.0, 3.0, 1.0, 1.0],
        ))
        .unwrap();
        let row = [1.5, 0.5, -2.0, 9.0];
        let res = kernel_shap(&model, &row, &bg, &ShapOptions::default(), 0).unwrap();
        assert!(res.exact);
        for i in 0..4 {
            let mean: f64 = bg.rows.column(i).mean();
            assert!((res.phi[i] - model.w[i] * (row[i] - mean)).abs() < 1e-10);
        }
        let recon = res.base_value + res.phi.iter().sum::<f64>();
        assert!((recon - res.prediction).abs() < 1e-10);
    }

    #[test]
    fn sampling_path_is_seeded_and_locally_accurate() {
        let w: Vec<f64> = (0..16).map(|i| (i as f64 - 7.0) / 3.0).collect();
        let model = Linear { w, b: 0.0 };
        let bg = BackgroundSet::uniform(DMatrix::from_fn(5, 16, |r, c| (r * c) as f64 % 7.0)).unwrap();
        let row: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let opts = ShapOptions {
            n_coalitions: Some(300),
            force_sampling: false,
        };
        let a = kernel_shap(&model, &row, &bg, &opts, 9).unwrap();
        let b = kernel_shap(&model, &row, &bg, &opts, 9).unwrap();
        assert!(!a.exact);
        assert_eq!(a, b);
        let recon = a.base_value + a.phi.iter().sum::<f64>();
        assert!((recon - a.prediction).abs() < 1e-8);
        // additive model: the regression is exact for any coalition sample
        for i in 0..16 {
            let mean = bg.rows.column(i).mean();
            assert!((a.phi[i] - model.w[i] * (row[i] - mean)).abs() < 1e-8);
        }
    }

    #[test]
    fn too_few_coalitions_rejected() {
        let model = Linear {
            w: vec![1.0; 20],
            b: 0.0,
        };
        let bg = BackgroundSet::uniform(DMatrix::zeros(1, 20)).unwrap();
        let opts = ShapOptions {
            n_coalitions: Some(10),
            force_sampling: false,
        };
        assert!(kernel_shap(&model, &[0.0; 20], &bg, &opts, 0).is_err());
    }
}
