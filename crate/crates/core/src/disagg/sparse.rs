//! Chow-Lin with an ℓ1 penalty on the indicator coefficients.
//!
//! For each `rho` the annual system is whitened and
//! `‖ỹ − c̃β₀ − X̃θ‖² + λ‖θ‖₁` is minimized by cyclic coordinate descent,
//! with the whitened indicator columns scaled to unit norm so the penalty
//! does not depend on indicator units. The intercept `β₀` is unpenalized.

use nalgebra::{DMatrix, DVector};

use super::chowlin::{default_rho_grid, profiled_loglik, whiten};
use super::{distribute_residuals, AggregationMatrix, Ar1Covariance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseTdOptions {
    pub rho_grid: Vec<f64>,
    /// Explicit penalties; `None` builds a log-spaced path from `λ_max`.
    pub lambda_path: Option<Vec<f64>>,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    /// Largest number of non-zero indicator coefficients BIC may select;
    /// `None` means half the number of years.
    pub max_df: Option<usize>,
    pub tol: f64,
    pub max_sweeps: usize,
    /// Extended-BIC weight `γ` on `2·df·ln p`; zero gives plain BIC.
    pub ebic_gamma: f64,
    pub selection: LambdaSelection,
}

/// How `λ` is picked along the path at each `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaSelection {
    #[default]
    Bic,
    /// Contiguous blocks of whitened years held out in turn; the penalty with
    /// the smallest mean squared prediction error wins.
    CrossValidation { folds: usize },
}

impl Default for SparseTdOptions {
    fn default() -> Self {
        Self {
            rho_grid: default_rho_grid(),
            lambda_path: None,
            n_lambda: 50,
            lambda_min_ratio: 1e-4,
            max_df: None,
            tol: 1e-10,
            max_sweeps: 100_000,
            ebic_gamma: 1.0,
            selection: LambdaSelection::Bic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseTdFit {
    pub monthly: Vec<f64>,
    pub intercept: f64,
    /// Indicator coefficients on their original scale.
    pub theta: Vec<f64>,
    pub lambda: f64,
    pub rho: f64,
    pub bic: f64,
    pub loglik: f64,
    pub at_boundary: bool,
}

impl SparseTdFit {
    pub fn support(&self) -> Vec<usize> {
        (0..self.theta.len()).filter(|&j| self.theta[j] != 0.0).collect()
    }
}

struct PathPoint {
    lambda: f64,
    intercept: f64,
    /// Coefficients of the unit-norm columns.
    beta: DVector<f64>,
    rss: f64,
    df: usize,
}

/// Change level at which coordinate descent tries an exact solve on its
/// current support.
const POLISH_TOL: f64 = 1e-2;
const POLISH_EVERY: usize = 10;

/// Coordinate descent on `‖y − cβ₀ − Xβ‖² + λ‖β‖₁` with unit-norm columns of
/// `X`. Warm-started from `(b0, beta)`.
///
/// Collinear indicators make plain coordinate descent crawl, so once the
/// updates are small the stationarity conditions are solved exactly on the
/// current support and signs; the result is kept if it satisfies the full
/// optimality conditions.
fn lasso_cd(
    y: &DVector<f64>,
    c: &DVector<f64>,
    x: &DMatrix<f64>,
    lambda: f64,
    b0: &mut f64,
    beta: &mut DVector<f64>,
    opts: &SparseTdOptions,
) -> Result<()> {
    let p = x.ncols();
    let c2 = c.norm_squared();
    let mut r = y - c * *b0 - x * &*beta;
    let scale = y.norm().max(1.0);
    let mut next_polish = 0;
    for sweep in 1..=opts.max_sweeps {
        let mut max_change = 0.0_f64;
        let new_b0 = *b0 + c.dot(&r) / c2;
        r.axpy(*b0 - new_b0, c, 1.0);
        max_change = max_change.max((new_b0 - *b0).abs() * c2.sqrt());
        *b0 = new_b0;
        for j in 0..p {
            let xj = x.column(j);
            let old = beta[j];
            let rho_j = xj.dot(&r) + old;
            let new = soft_threshold(rho_j, lambda / 2.0);
            if new != old {
                r.axpy(old - new, &xj, 1.0);
                beta[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        if max_change <= opts.tol * scale {
            return Ok(());
        }
        if max_change <= POLISH_TOL * scale && sweep >= next_polish {
            if let Some((pb0, pbeta)) = polish(y, c, x, lambda, beta) {
                *b0 = pb0;
                *beta = pbeta;
                return Ok(());
            }
            next_polish = sweep + POLISH_EVERY;
        }
        if sweep == opts.max_sweeps {
            return Err(Error::NoConvergence {
                iterations: sweep,
                gap: duality_gap(y, x, &r, beta, lambda),
            });
        }
    }
    Ok(())
}

/// Exact minimizer for the support and signs of `beta`, if it is optimal.
fn polish(
    y: &DVector<f64>,
    c: &DVector<f64>,
    x: &DMatrix<f64>,
    lambda: f64,
    beta: &DVector<f64>,
) -> Option<(f64, DVector<f64>)> {
    let active: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
    let mut z = DMatrix::zeros(y.len(), active.len() + 1);
    z.set_column(0, c);
    for (k, &j) in active.iter().enumerate() {
        z.set_column(k + 1, &x.column(j));
    }
    let mut rhs = z.transpose() * y;
    for (k, &j) in active.iter().enumerate() {
        rhs[k + 1] -= lambda / 2.0 * beta[j].signum();
    }
    let sol = (z.transpose() * &z).cholesky()?.solve(&rhs);
    let mut out = DVector::zeros(beta.len());
    for (k, &j) in active.iter().enumerate() {
        if sol[k + 1].signum() != beta[j].signum() || sol[k + 1] == 0.0 {
            return None;
        }
        out[j] = sol[k + 1];
    }
    let r = y - &z * &sol;
    let bound = lambda / 2.0 * (1.0 + 1e-9) + 1e-12 * y.norm();
    let kkt = (0..beta.len())
        .filter(|j| !active.contains(j))
        .all(|j| x.column(j).dot(&r).abs() <= bound);
    kkt.then_some((sol[0], out))
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Gap between the primal objective and the dual value of the rescaled
/// residual `ν = s·r` with `‖Xᵀν‖∞ ≤ λ/2`.
fn duality_gap(y: &DVector<f64>, x: &DMatrix<f64>, r: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
    let primal = r.norm_squared() + lambda * beta.abs().sum();
    let corr = (x.transpose() * r).amax();
    let s = if corr > 0.0 {
        (lambda / (2.0 * corr)).min(1.0)
    } else {
        1.0
    };
    let nu = r * s;
    let dual = 2.0 * nu.dot(y) - nu.norm_squared();
    (primal - dual).max(0.0)
}

/// Sparse temporal disaggregation. `λ` is chosen by BIC along the path for
/// each `rho`, and `rho` by the profiled likelihood at its selected `λ`.
pub fn sparse_td(annual: &[f64], indicators: &DMatrix<f64>, opts: &SparseTdOptions) -> Result<SparseTdFit> {
    let n = annual.len();
    if n < 3 {
        return Err(Error::NotEnoughRows(format!(
            "{n} years; sparse disaggregation needs at least 3"
        )));
    }
    if indicators.nrows() != 12 * n {
        return Err(Error::WidthMismatch {
            expected: 12 * n,
            actual: indicators.nrows(),
        });
    }
    if opts.rho_grid.is_empty() {
        return Err(Error::InvalidInput("empty rho grid".into()));
    }
    let p = indicators.ncols();
    let agg = AggregationMatrix::new(n);
    let x_m = indicators.clone().insert_column(0, 1.0);
    let x_a = agg.apply_matrix(&x_m)?;
    let y = DVector::from_column_slice(annual);
    let max_df = opts.max_df.unwrap_or(n / 2).min(n.saturating_sub(2));
    if !(opts.ebic_gamma >= 0.0) {
        return Err(Error::InvalidInput("ebic_gamma must be non-negative".into()));
    }
    if let LambdaSelection::CrossValidation { folds } = opts.selection {
        if folds < 2 || folds > n {
            return Err(Error::InvalidInput(format!("{folds} folds for {n} years")));
        }
    }
    let crit = Ebic::new(n, p, opts.ebic_gamma);

    struct Candidate {
        rho: f64,
        loglik: f64,
        bic: f64,
        point: PathPoint,
        norms: Vec<f64>,
        idx: usize,
    }
    let mut best: Option<Candidate> = None;
    for (idx, &rho) in opts.rho_grid.iter().enumerate() {
        let w = whiten(&y, &x_a, rho)?;
        let c: DVector<f64> = w.x.column(0).into_owned();
        let mut xs = w.x.remove_column(0);
        let mut norms = vec![1.0; p];
        for j in 0..p {
            let nj = xs.column(j).norm();
            if nj > 0.0 {
                norms[j] = nj;
                xs.column_mut(j).scale_mut(1.0 / nj);
            }
        }
        let lambdas = lambda_path(&w.y, &c, &xs, opts)?;
        let path = solve_path(&w.y, &c, &xs, &lambdas, opts, max_df)?;
        let chosen = match opts.selection {
            LambdaSelection::Bic => select_bic(path, &crit, max_df)?,
            LambdaSelection::CrossValidation { folds } => select_cv(path, &w.y, &c, &xs, folds, opts, max_df)?,
        };
        // rho is compared on the penalized likelihood so that a larger
        // selected support does not win by fit alone
        let loglik = profiled_loglik(chosen.rss, n, w.log_det);
        let bic = crit.penalized(loglik, chosen.df);
        if best.as_ref().is_none_or(|b| bic < b.bic) {
            best = Some(Candidate {
                rho,
                loglik,
                bic,
                point: chosen,
                norms,
                idx,
            });
        }
    }
    let best = best.expect("non-empty grid");
    let theta: Vec<f64> = (0..p).map(|j| best.point.beta[j] / best.norms[j]).collect();

    let mut coef = vec![best.point.intercept];
    coef.extend(&theta);
    let cov = Ar1Covariance::new(best.rho, 1.0, 12 * n)?;
    let monthly = distribute_residuals(&x_m, &DVector::from_vec(coef), &y, &x_a, &cov)?;
    Ok(SparseTdFit {
        monthly,
        intercept: best.point.intercept,
        theta,
        lambda: best.point.lambda,
        rho: best.rho,
        bic: best.bic,
        loglik: best.loglik,
        at_boundary: best.idx == 0 || best.idx + 1 == opts.rho_grid.len(),
    })
}

/// Decreasing penalties, explicit or log-spaced down from `λ_max`.
fn lambda_path(y: &DVector<f64>, c: &DVector<f64>, x: &DMatrix<f64>, opts: &SparseTdOptions) -> Result<Vec<f64>> {
    Ok(match &opts.lambda_path {
        Some(l) => {
            if l.is_empty() || l.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidInput(
                    "lambda path must be non-empty and non-negative".into(),
                ));
            }
            let mut l = l.clone();
            l.sort_by(|a, b| b.total_cmp(a));
            l
        }
        None => {
            let b0 = c.dot(y) / c.norm_squared();
            let r0 = y - c * b0;
            let lambda_max = 2.0 * (x.transpose() * &r0).amax();
            if lambda_max == 0.0 || opts.n_lambda < 2 {
                vec![lambda_max]
            } else {
                let ratio = opts.lambda_min_ratio.powf(1.0 / (opts.n_lambda - 1) as f64);
                (0..opts.n_lambda).map(|k| lambda_max * ratio.powi(k as i32)).collect()
            }
        }
    })
}

/// Solves along `lambdas`. A multi-point path stops after the first point
/// with more than `max_df` non-zeros, since selection cannot go beyond it.
fn solve_path(
    y: &DVector<f64>,
    c: &DVector<f64>,
    x: &DMatrix<f64>,
    lambdas: &[f64],
    opts: &SparseTdOptions,
    max_df: usize,
) -> Result<Vec<PathPoint>> {
    solve_path_until(y, c, x, lambdas, opts, max_df, false)
}

/// [`solve_path`]; with `truncate` a non-converging penalty ends the path
/// instead of failing it.
fn solve_path_until(
    y: &DVector<f64>,
    c: &DVector<f64>,
    x: &DMatrix<f64>,
    lambdas: &[f64],
    opts: &SparseTdOptions,
    max_df: usize,
    truncate: bool,
) -> Result<Vec<PathPoint>> {
    let p = x.ncols();
    let mut b0 = 0.0;
    let mut beta = DVector::zeros(p);
    let multi = lambdas.len() > 1;
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        match lasso_cd(y, c, x, lambda, &mut b0, &mut beta, opts) {
            Err(Error::NoConvergence { .. }) if truncate => break,
            r => r?,
        }
        let rss = (y - c * b0 - x * &beta).norm_squared();
        let df = beta.iter().filter(|v| **v != 0.0).count();
        out.push(PathPoint {
            lambda,
            intercept: b0,
            df,
            beta: beta.clone(),
            rss,
        });
        if multi && df > max_df {
            break;
        }
    }
    Ok(out)
}

/// Extended BIC, `−2 ln L + (df + 1) ln n + 2γ·df·ln p`.
struct Ebic {
    n: f64,
    p: f64,
    gamma: f64,
}

impl Ebic {
    fn new(n: usize, p: usize, gamma: f64) -> Self {
        Self {
            n: n as f64,
            p: p.max(1) as f64,
            gamma,
        }
    }

    fn penalty(&self, df: usize) -> f64 {
        let d = df as f64;
        (d + 1.0) * self.n.ln() + 2.0 * self.gamma * d * self.p.ln()
    }

    /// Same ordering as [`Ebic::penalized`] at a fixed `rho`.
    fn value(&self, rss: f64, df: usize) -> f64 {
        self.n * (rss / self.n).max(f64::MIN_POSITIVE).ln() + self.penalty(df)
    }

    fn penalized(&self, loglik: f64, df: usize) -> f64 {
        -2.0 * loglik + self.penalty(df)
    }
}

fn select_bic(path: Vec<PathPoint>, crit: &Ebic, max_df: usize) -> Result<PathPoint> {
    select_by(path, max_df, |_, pt| crit.value(pt.rss, pt.df))
}

/// Lowest `score(index, point)` among the points within `max_df`.
fn select_by(path: Vec<PathPoint>, max_df: usize, score: impl Fn(usize, &PathPoint) -> f64) -> Result<PathPoint> {
    let explicit_single = path.len() == 1;
    path.into_iter()
        .enumerate()
        .filter(|(_, pt)| explicit_single || pt.df <= max_df)
        .map(|(k, pt)| (score(k, &pt), pt))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, pt)| pt)
        .ok_or_else(|| Error::InvalidInput(format!("no path point with at most {max_df} non-zero coefficients")))
}

/// Cross-validated choice among the points of `path`, refitting each fold
/// on the same penalties. Penalties a fold's path never reaches score `∞`.
fn select_cv(
    path: Vec<PathPoint>,
    y: &DVector<f64>,
    c: &DVector<f64>,
    x: &DMatrix<f64>,
    folds: usize,
    opts: &SparseTdOptions,
    max_df: usize,
) -> Result<PathPoint> {
    let n = y.len();
    let lambdas: Vec<f64> = path.iter().map(|pt| pt.lambda).collect();
    let mut sse = vec![0.0; lambdas.len()];
    for f in 0..folds {
        let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
        let train: Vec<usize> = (0..n).filter(|i| *i < lo || *i >= hi).collect();
        let yt = y.select_rows(&train);
        let ct = c.select_rows(&train);
        let mut xt = x.select_rows(&train);
        let mut norms = vec![1.0; x.ncols()];
        for (j, nj) in norms.iter_mut().enumerate() {
            let v = xt.column(j).norm();
            if v > 0.0 {
                *nj = v;
                xt.column_mut(j).scale_mut(1.0 / v);
            }
        }
        let fold_path = solve_path_until(&yt, &ct, &xt, &lambdas, opts, max_df, true)?;
        for (k, e) in sse.iter_mut().enumerate() {
            let Some(pt) = fold_path.get(k) else {
                *e = f64::INFINITY;
                continue;
            };
            let beta = DVector::from_fn(x.ncols(), |j, _| pt.beta[j] / norms[j]);
            for i in lo..hi {
                let r = y[i] - c[i] * pt.intercept - (x.row(i) * &beta)[0];
                *e += r * r;
            }
        }
    }
    select_by(path, max_df, |k, _| sse[k])
}
