//! Ordinary least squares benchmark on the same design matrices as the MLP.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ConfigId, FeatureColumnMeta, FeatureMatrix, FeatureSymbol};
use crate::model::Predictor;

/// Relative size of a QR pivot below which a column counts as dependent.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsOptions {
    /// Ridge penalty applied when the design is rank deficient. `None`
    /// turns rank deficiency into an error.
    pub ridge_fallback: Option<f64>,
}

impl Default for OlsOptions {
    fn default() -> Self {
        Self {
            ridge_fallback: Some(1e-8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsModel {
    pub config: ConfigId,
    pub columns: Vec<FeatureColumnMeta>,
    /// One coefficient per column on the raw feature scale.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Penalty actually used, if the fallback engaged.
    pub ridge: Option<f64>,
}

/// Fits `y ≈ b + Xθ` on the targeted rows of `matrix`.
///
/// Columns are standardized before a Householder QR solve. The first month
/// dummy (`j = 0`) is the reference category and keeps a zero coefficient,
/// since the twelve dummies sum to the intercept column.
pub fn fit_ols(matrix: &FeatureMatrix, opts: &OlsOptions) -> Result<OlsModel> {
    let m = matrix.targeted();
    let y = DVector::from_vec(m.targets()?);
    let n = m.n_rows();
    let active: Vec<usize> = (0..m.n_cols())
        .filter(|&j| {
            let c = &m.columns[j];
            !(c.symbol == FeatureSymbol::MonthOnehot && c.month_j == Some(0))
        })
        .collect();
    if n == 0 {
        return Err(Error::NotEnoughRows("no rows with observed targets".into()));
    }

    let p = active.len();
    let mut mean = vec![0.0; p];
    let mut scale = vec![1.0; p];
    for (a, &j) in active.iter().enumerate() {
        let col = m.x.column(j);
        mean[a] = col.mean();
        let sd = (col.iter().map(|v| (v - mean[a]).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd > 0.0 {
            scale[a] = sd;
        }
    }
    let y_mean = y.mean();
    let z = DMatrix::from_fn(n, p, |r, a| (m.x[(r, active[a])] - mean[a]) / scale[a]);
    let yc = y.add_scalar(-y_mean);

    let (beta, ridge) = match solve_ls(&z, &yc, 0.0) {
        Ok(b) => (b, None),
        Err(Error::RankDeficient { rank, cols }) => match opts.ridge_fallback {
            Some(lambda) => (solve_ls(&z, &yc, lambda)?, Some(lambda)),
            None => return Err(Error::RankDeficient { rank, cols }),
        },
        Err(e) => return Err(e),
    };

    let mut coefficients = vec![0.0; m.n_cols()];
    let mut intercept = y_mean;
    for (a, &j) in active.iter().enumerate() {
        coefficients[j] = beta[a] / scale[a];
        intercept -= coefficients[j] * mean[a];
    }
    Ok(OlsModel {
        config: m.config,
        columns: m.columns.clone(),
        coefficients,
        intercept,
        ridge,
    })
}

/// Least squares on centered data; a positive `lambda` solves the ridge
/// problem through the augmented system `[Z; √λ I]`.
fn solve_ls(z: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let (n, p) = z.shape();
    if p == 0 {
        return Ok(DVector::zeros(0));
    }
    let (a, b) = if lambda > 0.0 {
        let mut a = DMatrix::zeros(n + p, p);
        a.rows_mut(0, n).copy_from(z);
        for i in 0..p {
            a[(n + i, i)] = lambda.sqrt();
        }
        let mut b = DVector::zeros(n + p);
        b.rows_mut(0, n).copy_from(y);
        (a, b)
    } else {
        if n < p {
            return Err(Error::RankDeficient { rank: n, cols: p });
        }
        (z.clone(), y.clone())
    };
    let qr = a.qr();
    let r = qr.r();
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let rank = (0..p).filter(|&i| r[(i, i)].abs() > RANK_TOL * max_diag).count();
    if rank < p || max_diag == 0.0 {
        return Err(Error::RankDeficient { rank, cols: p });
    }
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))
}

/// Affine evaluation `b + Xθ` on raw rows.
pub fn predict_ols(model: &OlsModel, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x.ncols() != model.coefficients.len() {
        return Err(Error::WidthMismatch {
            expected: model.coefficients.len(),
            actual: x.ncols(),
        });
    }
    let theta = DVector::from_column_slice(&model.coefficients);
    Ok((x * theta).iter().map(|v| v + model.intercept).collect())
}

impl OlsModel {
    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        if matrix.columns != self.columns {
            return Err(Error::ColumnMismatch(format!(
                "OLS model for {} does not match a {} design",
                self.config, matrix.config
            )));
        }
        predict_ols(self, &matrix.x)
    }

    /// `column,coefficient` rows, intercept first.
    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut out = String::new();
        if let Some(c) = comment {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str("column,coefficient\n");
        out.push_str(&format!("intercept,{}\n", self.intercept));
        for (meta, c) in self.columns.iter().zip(&self.coefficients) {
            out.push_str(&format!("\"{}\",{c}\n", meta.label()));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

impl Predictor for OlsModel {
    fn predict_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        predict_ols(self, x)
    }

    fn input_width(&self) -> usize {
        self.coefficients.len()
    }
}
