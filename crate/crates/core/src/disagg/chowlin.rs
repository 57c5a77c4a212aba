use nalgebra::{DMatrix, DVector};

use super::{distribute_residuals, AggregationMatrix, Ar1Covariance};
use crate::error::{Error, Result};

/// `−0.99, −0.98, …, 0.99`.
pub fn default_rho_grid() -> Vec<f64> {
    (0..199).map(|k| -0.99 + 0.01 * k as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChowLinOptions {
    pub rho_grid: Vec<f64>,
    /// Prepend a column of ones to the monthly indicators.
    pub add_constant: bool,
}

impl Default for ChowLinOptions {
    fn default() -> Self {
        Self {
            rho_grid: default_rho_grid(),
            add_constant: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChowLinFit {
    /// Monthly estimates, January of the first year first.
    pub monthly: Vec<f64>,
    /// Coefficients, the constant first when one was added.
    pub theta: Vec<f64>,
    pub rho: f64,
    /// Profiled innovation variance at `rho`.
    pub sigma2: f64,
    pub loglik: f64,
    /// `rho` sits on the first or last grid point.
    pub at_boundary: bool,
    /// `(rho, log-likelihood)` over the grid.
    pub profile: Vec<(f64, f64)>,
}

/// GLS fit of the annual regression at one `rho` with `σ²` profiled out.
pub(crate) struct GlsAtRho {
    pub theta: DVector<f64>,
    pub sigma2: f64,
    pub loglik: f64,
}

/// Whitened annual system `L⁻¹y`, `L⁻¹X_a` with `V_a = L Lᵀ` at unit `σ²`,
/// plus `ln|V_a|`.
pub(crate) struct Whitened {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub log_det: f64,
}

pub(crate) fn whiten(y: &DVector<f64>, x_a: &DMatrix<f64>, rho: f64) -> Result<Whitened> {
    let n = y.len();
    let cov = Ar1Covariance::new(rho, 1.0, 12 * n)?;
    let chol = cov
        .aggregated()?
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("aggregated covariance at rho = {rho}")))?;
    let l = chol.l();
    let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let wy = l
        .solve_lower_triangular(y)
        .ok_or_else(|| Error::Singular("whitening".into()))?;
    let wx = l
        .solve_lower_triangular(x_a)
        .ok_or_else(|| Error::Singular("whitening".into()))?;
    Ok(Whitened { y: wy, x: wx, log_det })
}

/// Concentrated Gaussian log-likelihood of annual residuals.
pub(crate) fn profiled_loglik(rss: f64, n: usize, log_det: f64) -> f64 {
    let nf = n as f64;
    let sigma2 = (rss / nf).max(f64::MIN_POSITIVE);
    -0.5 * nf * ((2.0 * std::f64::consts::PI).ln() + sigma2.ln() + 1.0) - 0.5 * log_det
}

pub(crate) fn gls_at_rho(y: &DVector<f64>, x_a: &DMatrix<f64>, rho: f64) -> Result<GlsAtRho> {
    let n = y.len();
    let p = x_a.ncols();
    if n <= p {
        return Err(Error::RankDeficient { rank: n, cols: p });
    }
    let w = whiten(y, x_a, rho)?;
    let qr = w.x.clone().qr();
    let r = qr.r();
    let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let rank = (0..p).filter(|&i| r[(i, i)].abs() > 1e-10 * max_diag).count();
    if rank < p {
        return Err(Error::RankDeficient { rank, cols: p });
    }
    let theta = r
        .solve_upper_triangular(&(qr.q().transpose() * &w.y))
        .ok_or_else(|| Error::Singular("GLS normal equations".into()))?;
    let rss = (&w.y - &w.x * &theta).norm_squared();
    Ok(GlsAtRho {
        sigma2: rss / n as f64,
        loglik: profiled_loglik(rss, n, w.log_det),
        theta,
    })
}

fn design(indicators: &DMatrix<f64>, add_constant: bool) -> DMatrix<f64> {
    if add_constant {
        indicators.clone().insert_column(0, 1.0)
    } else {
        indicators.clone()
    }
}

fn check_shapes(annual: &[f64], indicators: &DMatrix<f64>) -> Result<()> {
    if annual.is_empty() {
        return Err(Error::InvalidInput("no annual observations".into()));
    }
    if indicators.nrows() != 12 * annual.len() {
        return Err(Error::WidthMismatch {
            expected: 12 * annual.len(),
            actual: indicators.nrows(),
        });
    }
    if annual.iter().chain(indicators.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value in disaggregation inputs".into()));
    }
    Ok(())
}

/// Chow-Lin disaggregation with `rho` chosen by maximum likelihood over a
/// grid. The monthly output sums to `annual` year by year.
pub fn chow_lin(annual: &[f64], indicators: &DMatrix<f64>, opts: &ChowLinOptions) -> Result<ChowLinFit> {
    check_shapes(annual, indicators)?;
    if opts.rho_grid.is_empty() {
        return Err(Error::InvalidInput("empty rho grid".into()));
    }
    let x_m = design(indicators, opts.add_constant);
    let x_a = AggregationMatrix::new(annual.len()).apply_matrix(&x_m)?;
    let y = DVector::from_column_slice(annual);

    let mut profile = Vec::with_capacity(opts.rho_grid.len());
    let mut best: Option<(usize, GlsAtRho)> = None;
    for (i, &rho) in opts.rho_grid.iter().enumerate() {
        let fit = gls_at_rho(&y, &x_a, rho)?;
        profile.push((rho, fit.loglik));
        if best.as_ref().is_none_or(|(_, b)| fit.loglik > b.loglik) {
            best = Some((i, fit));
        }
    }
    let (idx, fit) = best.expect("non-empty grid");
    let rho = opts.rho_grid[idx];
    finish(
        annual,
        &x_m,
        &x_a,
        &y,
        rho,
        fit,
        profile,
        idx == 0 || idx + 1 == opts.rho_grid.len(),
    )
}

/// Chow-Lin at a given `rho`.
pub fn chow_lin_fixed_rho(
    annual: &[f64],
    indicators: &DMatrix<f64>,
    rho: f64,
    add_constant: bool,
) -> Result<ChowLinFit> {
    check_shapes(annual, indicators)?;
    let x_m = design(indicators, add_constant);
    let x_a = AggregationMatrix::new(annual.len()).apply_matrix(&x_m)?;
    let y = DVector::from_column_slice(annual);
    let fit = gls_at_rho(&y, &x_a, rho)?;
    let profile = vec![(rho, fit.loglik)];
    finish(annual, &x_m, &x_a, &y, rho, fit, profile, false)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    annual: &[f64],
    x_m: &DMatrix<f64>,
    x_a: &DMatrix<f64>,
    y: &DVector<f64>,
    rho: f64,
    fit: GlsAtRho,
    profile: Vec<(f64, f64)>,
    at_boundary: bool,
) -> Result<ChowLinFit> {
    let cov = Ar1Covariance::new(rho, 1.0, 12 * annual.len())?;
    let monthly = distribute_residuals(x_m, &fit.theta, y, x_a, &cov)?;
    Ok(ChowLinFit {
        monthly,
        theta: fit.theta.iter().copied().collect(),
        rho,
        sigma2: fit.sigma2,
        loglik: fit.loglik,
        at_boundary,
        profile,
    })
}
