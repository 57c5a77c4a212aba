//! Acceptance suite. Every test prints one `criterion N ... PASS|FAIL` line
//! and then asserts, so a failing criterion still reports its numbers.
//!
//! Run with `cargo test -p raggededge --test acceptance -- --nocapture`.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use raggededge::baselines::OlsOptions;
use raggededge::dataio::{generate_synthetic_panel, Dgp, DgpKind, Panel, SyntheticSpec};
use raggededge::disagg::{
    annual_anchors, chow_lin, corrupted_input_contributions, nn_elasticity_disagg, sparse_td, AggregationMatrix,
    ChowLinOptions, SparseTdOptions,
};
use raggededge::evalkit::{correlation_p_value, evaluate_configs, lagged_correlation, ModelFamily, SplitSpec};
use raggededge::explain::{
    expected_elasticity, kernel_shap, BackgroundSet, ElasticityEstimate, ElasticityTable, Perturbation, ShapOptions,
};
use raggededge::features::{
    assemble, assemble_svi_sum, ConfigId, FeatureColumnMeta, FeatureMatrix, FeatureSymbol, RowKey,
};
use raggededge::model::Predictor;
use raggededge::neuralnet::mlp::{mse, ParamKind};
use raggededge::neuralnet::train::prepare;
use raggededge::neuralnet::{train_ensemble, train_one, AdamW, MlpArchitecture, MlpParams, Mode, TrainSpec};
use raggededge::Result;

/// Prints the criterion line and asserts. The line goes to the raw stderr
/// handle so it shows without `--nocapture`.
fn report(n: u32, name: &str, pass: bool, details: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n:>2} {name:<28} ... {verdict} ({details})");
    assert!(pass, "criterion {n} failed: {details}");
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ---------------------------------------------------------------- 1

const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_TIME_LIMIT: Duration = Duration::from_secs(30);

#[test]
fn criterion_01_gradient_check() {
    let start = Instant::now();
    let arch = MlpArchitecture::with_hidden(vec![12, 8, 4], 6, 5, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut p = MlpParams::init(&arch, &mut rng);
    for layer in &mut p.hidden {
        layer.bn.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
        layer.bn.beta.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    let x = DMatrix::from_fn(8, 6, |r, c| {
        if c == 5 {
            (r % 3) as f64
        } else {
            rng.random_range(-1.0..1.0)
        }
    });
    let y: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();

    let loss = |q: &MlpParams| mse(&q.forward(&x, Mode::Train).unwrap().0, &y);
    let (pred, cache) = p.forward(&x, Mode::Train).unwrap();
    let analytic: Vec<Vec<f64>> = p
        .backward(&cache, &pred, &y)
        .unwrap()
        .tensors()
        .into_iter()
        .map(<[f64]>::to_vec)
        .collect();

    let h = 1e-6;
    let mut worst = 0.0_f64;
    for (t, a) in analytic.iter().enumerate() {
        let numeric: Vec<f64> = (0..a.len())
            .map(|j| {
                let mut plus = p.clone();
                plus.tensors_mut()[t].1[j] += h;
                let mut minus = p.clone();
                minus.tensors_mut()[t].1[j] -= h;
                (loss(&plus) - loss(&minus)) / (2.0 * h)
            })
            .collect();
        let diff = a.iter().zip(&numeric).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        let scale = a
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|v| v * v).sum::<f64>().sqrt());
        worst = worst.max(if scale > 0.0 { diff / scale } else { diff });
    }
    let elapsed = start.elapsed();
    report(
        1,
        "gradient check",
        worst < GRAD_REL_TOL && elapsed < GRAD_TIME_LIMIT,
        format!(
            "{} tensors, worst relative error {worst:.2e} < {GRAD_REL_TOL:e}, {:.2}s",
            analytic.len(),
            secs(elapsed)
        ),
    );
}

// ---------------------------------------------------------------- 2

const OVERFIT_MSE: f64 = 1e-3;
const OVERFIT_EPOCHS: usize = 5000;
const OVERFIT_TIME_LIMIT: Duration = Duration::from_secs(120);

fn linear_design(n: usize, width: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns: Vec<FeatureColumnMeta> = (0..width)
        .map(|j| FeatureColumnMeta {
            symbol: FeatureSymbol::ArTarget,
            topic_or_variable: None,
            lag_years: Some(j + 1),
            month_j: None,
        })
        .collect();
    columns.push(FeatureColumnMeta {
        symbol: FeatureSymbol::CountryId,
        topic_or_variable: None,
        lag_years: None,
        month_j: None,
    });
    let mut x = DMatrix::zeros(n, width + 1);
    let mut y = Vec::with_capacity(n);
    for r in 0..n {
        let mut t = 10.0;
        for j in 0..width {
            let v = rng.random_range(-1.0..1.0);
            x[(r, j)] = v;
            t += (1.0 + 0.5 * j as f64) * v;
        }
        y.push(Some(t));
    }
    FeatureMatrix {
        rows: (0..n)
            .map(|r| RowKey {
                country: 0,
                year: 2000 + (r / 4) as i32,
                month_j: r % 12,
            })
            .collect(),
        x,
        columns,
        y,
        config: ConfigId::LagRD,
        tau: width,
        countries: vec!["AA".into()],
    }
}

#[test]
fn criterion_02_overfit() {
    let start = Instant::now();
    let m = linear_design(32, 3, 202);
    let spec = TrainSpec {
        max_epochs: OVERFIT_EPOCHS,
        patience: OVERFIT_EPOCHS,
        ensemble_size: 1,
        log_target: false,
        weight_decay: 0.0,
        ..TrainSpec::default()
    };
    let net = train_one(&m, &spec, 3).unwrap();
    // rows the optimizer saw; the latest years are held out for early stopping
    let train_rows = prepare(&m, &spec).unwrap().train;
    let fit = m.select_rows(&train_rows);
    let truth = fit.targets().unwrap();
    let z = net.preprocessing.apply(&fit.x).unwrap();
    let back = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|p| net.preprocessing.inverse_target(p)).collect() };
    // one batch holds every training row, so batch statistics are the
    // statistics the loss was minimized under
    let err = mse(&back(net.params.forward(&z, Mode::Train).unwrap().0), &truth);
    let eval_err = mse(&back(net.params.predict(&z).unwrap()), &truth);
    let elapsed = start.elapsed();
    report(
        2,
        "overfit 32 rows",
        err < OVERFIT_MSE && elapsed < OVERFIT_TIME_LIMIT,
        format!(
            "train MSE {err:.2e} < {OVERFIT_MSE:e} on {} rows, {} epochs (best {}); \
             running-statistics MSE {eval_err:.2e}; {:.1}s",
            train_rows.len(),
            net.history.epochs.len(),
            net.history.best_epoch,
            secs(elapsed)
        ),
    );
}

// ---------------------------------------------------------------- 3

const ADAMW_TOL: f64 = 1e-10;

#[test]
fn criterion_03_adamw_trace() {
    // f(a, b) = 2(a − 1)² + 0.5(b + 3)²; `a` is a decaying weight, `b` a bias
    let grad = |a: f64, b: f64| (4.0 * (a - 1.0), b + 3.0);
    let (lr, wd) = (0.1, 0.02);

    let mut opt = AdamW::new(lr, wd);
    let (mut a, mut b) = (0.5_f64, 0.25_f64);
    let mut trace = Vec::new();
    for _ in 0..10 {
        let (ga, gb) = grad(a, b);
        let mut pa = [a];
        let mut pb = [b];
        {
            let mut params: Vec<(ParamKind, &mut [f64])> =
                vec![(ParamKind::Weight, &mut pa[..]), (ParamKind::Bias, &mut pb[..])];
            opt.step(&mut params, &[&[ga], &[gb]]);
        }
        a = pa[0];
        b = pb[0];
        trace.push((a, b));
    }

    let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8_f64);
    let (mut oa, mut ob) = (0.5_f64, 0.25_f64);
    let (mut ma, mut va, mut mb, mut vb) = (0.0, 0.0, 0.0, 0.0);
    let mut worst = 0.0_f64;
    for (t, &(ta, tb)) in trace.iter().enumerate() {
        let k = (t + 1) as i32;
        let (ga, gb) = grad(oa, ob);
        ma = b1 * ma + (1.0 - b1) * ga;
        va = b2 * va + (1.0 - b2) * ga * ga;
        mb = b1 * mb + (1.0 - b1) * gb;
        vb = b2 * vb + (1.0 - b2) * gb * gb;
        let step_a = lr * (ma / (1.0 - b1.powi(k))) / ((va / (1.0 - b2.powi(k))).sqrt() + eps);
        let step_b = lr * (mb / (1.0 - b1.powi(k))) / ((vb / (1.0 - b2.powi(k))).sqrt() + eps);
        oa = oa - step_a - wd * oa;
        ob -= step_b;
        worst = worst.max((ta - oa).abs()).max((tb - ob).abs());
    }
    report(
        3,
        "AdamW trace",
        worst < ADAMW_TOL,
        format!("10 steps, max deviation {worst:.1e} < {ADAMW_TOL:e}"),
    );
}

// ---------------------------------------------------------------- 4

const SUM_REL_TOL: f64 = 1e-9;
const SUM_CASES: usize = 100;

fn random_panel(rng: &mut ChaCha8Rng) -> Panel {
    let k_s = rng.random_range(2..=4);
    let n_years = rng.random_range(4..=10);
    let spec = SyntheticSpec {
        countries: 1,
        start_year: 2000,
        end_year: 2000 + n_years - 1,
        k_s,
        dgp: Dgp {
            kind: DgpKind::Linear,
            coefficients: (0..k_s).map(|_| rng.random_range(0.0..1.0)).collect(),
            ar_rho: rng.random_range(-0.5..0.9),
            noise_sigma: rng.random_range(0.1..2.0),
            intercept: rng.random_range(5.0..50.0),
            lag_months: 0,
        },
        seed: 0,
        samples: 2,
        sample_noise: 1.0,
    };
    generate_synthetic_panel(&spec, rng.random()).unwrap().0
}

fn relative_sum_error(monthly: &[f64], annual: &[f64]) -> f64 {
    let sums = AggregationMatrix::new(annual.len()).apply(monthly).unwrap();
    sums.iter()
        .zip(annual)
        .map(|(s, a)| (s - a).abs() / a.abs())
        .fold(0.0, f64::max)
}

#[test]
fn criterion_04_sum_constraint() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = [0.0_f64; 3];
    let mut failures = [0usize; 3];
    for _ in 0..SUM_CASES {
        // Chow-Lin needs more years than coefficients, constant included
        let n = rng.random_range(3..=12);
        let p = rng.random_range(1..=5.min(n - 2));
        let annual: Vec<f64> = (0..n).map(|_| rng.random_range(50.0..5000.0)).collect();
        let x = DMatrix::from_fn(12 * n, p, |_, _| rng.random_range(0.0..100.0));
        for (i, res) in [
            chow_lin(&annual, &x, &ChowLinOptions::default()).map(|f| f.monthly),
            sparse_td(&annual, &x, &SparseTdOptions::default()).map(|f| f.monthly),
        ]
        .into_iter()
        .enumerate()
        {
            match res {
                Ok(m) => {
                    let e = relative_sum_error(&m, &annual);
                    worst[i] = worst[i].max(e);
                    failures[i] += usize::from(!(e < SUM_REL_TOL));
                }
                Err(_) => failures[i] += 1,
            }
        }

        let panel = random_panel(&mut rng);
        let entries: BTreeMap<(String, String), ElasticityEstimate> = panel
            .topics()
            .iter()
            .map(|t| {
                let est = ElasticityEstimate {
                    eta: rng.random_range(0.05..2.0),
                    n_draws: 64,
                    n_obs: 1,
                    excluded: 0,
                };
                ((panel.countries()[0].clone(), t.clone()), est)
            })
            .collect();
        let table = ElasticityTable {
            perturbation: Perturbation::default(),
            entries,
        };
        let (anchors, _) = annual_anchors(&panel, 0, None).unwrap();
        match nn_elasticity_disagg(&panel, 0, &anchors, &table) {
            Ok((series, _)) => {
                let e = relative_sum_error(&series.values, &anchors);
                worst[2] = worst[2].max(e);
                failures[2] += usize::from(!(e < SUM_REL_TOL));
            }
            Err(_) => failures[2] += 1,
        }
    }
    report(
        4,
        "sum constraint",
        failures.iter().all(|&f| f == 0),
        format!(
            "{SUM_CASES} inputs; worst relative error chow_lin {:.1e}, sp_td {:.1e}, nn_elasticity {:.1e}; exceptions {:?}",
            worst[0], worst[1], worst[2], failures
        ),
    );
}

// ---------------------------------------------------------------- 5

const CL_SEED: u64 = 1;
const CL_RHO_BAND: (f64, f64) = (0.35, 0.65);
const CL_RMSE_RATIO: f64 = 0.5;
const CL_TIME_LIMIT: Duration = Duration::from_secs(60);

/// Three AR(0.9) indicators, `y = 10 + x·(1, −0.5, 0.8) + u` with AR(0.5)
/// unit-variance-innovation residuals, 30 years.
fn chow_lin_dgp(seed: u64) -> (Vec<f64>, DMatrix<f64>, Vec<f64>) {
    let months = 360;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let mut x = DMatrix::zeros(months, 3);
    for k in 0..3 {
        let mut v = 0.0;
        for m in 0..months {
            v = 0.9 * v + z.sample(&mut rng);
            x[(m, k)] = v;
        }
    }
    let mut u = 0.0;
    let truth: Vec<f64> = (0..months)
        .map(|m| {
            u = 0.5 * u + z.sample(&mut rng);
            10.0 + x[(m, 0)] - 0.5 * x[(m, 1)] + 0.8 * x[(m, 2)] + u
        })
        .collect();
    let annual = AggregationMatrix::new(30).apply(&truth).unwrap();
    (annual, x, truth)
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// `(ρ̂, reconstruction RMSE / uniform-split RMSE)`.
fn chow_lin_trial(seed: u64) -> (f64, f64) {
    let (annual, x, truth) = chow_lin_dgp(seed);
    let fit = chow_lin(&annual, &x, &ChowLinOptions::default()).unwrap();
    let uniform: Vec<f64> = annual.iter().flat_map(|a| [a / 12.0; 12]).collect();
    (fit.rho, rmse(&fit.monthly, &truth) / rmse(&uniform, &truth))
}

#[test]
fn criterion_05_chow_lin_oracle() {
    let start = Instant::now();
    let (rho, ratio) = chow_lin_trial(CL_SEED);
    let elapsed = start.elapsed();

    // context only: how the estimator behaves across seeds
    let trials: Vec<(f64, f64)> = (0..100).map(chow_lin_trial).collect();
    let in_band = trials
        .iter()
        .filter(|t| t.0 >= CL_RHO_BAND.0 && t.0 <= CL_RHO_BAND.1)
        .count();
    let ratio_ok = trials.iter().filter(|t| t.1 <= CL_RMSE_RATIO).count();
    let at_edges = trials.iter().filter(|t| t.0.abs() >= 0.9).count();

    let pass = rho >= CL_RHO_BAND.0 && rho <= CL_RHO_BAND.1 && ratio <= CL_RMSE_RATIO && elapsed < CL_TIME_LIMIT;
    report(
        5,
        "Chow-Lin oracle",
        pass,
        format!(
            "seed {CL_SEED}: rho {rho:.2} (band {:?}), RMSE ratio {ratio:.3} (limit {CL_RMSE_RATIO}), {:.2}s; \
             over seeds 0..100: rho in band {in_band}, |rho| >= 0.9 {at_edges}, ratio ok {ratio_ok}",
            CL_RHO_BAND,
            secs(elapsed)
        ),
    );
}

// ---------------------------------------------------------------- 6

const SP_COLUMNS: usize = 50;
const SP_YEARS: usize = 25;
const SP_TRUE: [(usize, f64); 3] = [(3, 2.0), (17, -1.5), (41, 1.0)];
const SP_MIN_F1: f64 = 0.8;
const SP_MIN_SEEDS: usize = 8;
const SP_TIME_LIMIT: Duration = Duration::from_secs(300);

fn sparse_trial(seed: u64) -> (f64, Vec<usize>) {
    let months = 12 * SP_YEARS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let x = DMatrix::from_fn(months, SP_COLUMNS, |_, _| z.sample(&mut rng));
    let mut u = 0.0;
    let monthly: Vec<f64> = (0..months)
        .map(|m| {
            u = 0.5 * u + 0.3 * z.sample(&mut rng);
            20.0 + SP_TRUE.iter().map(|&(j, b)| b * x[(m, j)]).sum::<f64>() + u
        })
        .collect();
    let annual = AggregationMatrix::new(SP_YEARS).apply(&monthly).unwrap();
    let fit = sparse_td(&annual, &x, &SparseTdOptions::default()).unwrap();
    let support = fit.support();
    let tp = support.iter().filter(|j| SP_TRUE.iter().any(|t| t.0 == **j)).count() as f64;
    let precision = if support.is_empty() {
        0.0
    } else {
        tp / support.len() as f64
    };
    let recall = tp / SP_TRUE.len() as f64;
    let f1 = if tp == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (f1, support)
}

#[test]
fn criterion_06_sparse_support() {
    let start = Instant::now();
    let f1: Vec<f64> = (0..10).map(|s| sparse_trial(s).0).collect();
    let elapsed = start.elapsed();
    let good = f1.iter().filter(|&&v| v >= SP_MIN_F1).count();
    report(
        6,
        "sparse TD support",
        good >= SP_MIN_SEEDS && elapsed < SP_TIME_LIMIT,
        format!(
            "F1 >= {SP_MIN_F1} in {good}/10 seeds (need {SP_MIN_SEEDS}), F1 {:?}, {:.1}s",
            f1.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            secs(elapsed)
        ),
    );
}

// ---------------------------------------------------------------- 7

const SHAP_BRUTE_TOL: f64 = 1e-8;
const SHAP_LINEAR_TOL: f64 = 1e-6;
const SHAP_LOCAL_TOL: f64 = 1e-6;

struct Nonlinear(usize);

impl Nonlinear {
    fn eval(r: &[f64]) -> f64 {
        let mut v = r[0] * r[1] + r[2].sin() + r[3] * r[3] - r[4] * r[5] * r[6] + (0.1 * r[7]).exp();
        for (i, x) in r.iter().enumerate().skip(8) {
            v += 0.1 * (i as f64) * x * r[i % 8];
        }
        v
    }
}

impl Predictor for Nonlinear {
    fn predict_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(x.row_iter()
            .map(|r| Self::eval(&r.iter().copied().collect::<Vec<_>>()))
            .collect())
    }
    fn input_width(&self) -> usize {
        self.0
    }
}

struct Linear {
    w: Vec<f64>,
    c: f64,
}

impl Predictor for Linear {
    fn predict_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(x.row_iter()
            .map(|r| self.c + r.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }
    fn input_width(&self) -> usize {
        self.w.len()
    }
}

fn weighted_background(rng: &mut ChaCha8Rng, k: usize, d: usize) -> BackgroundSet {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
    let total: f64 = raw.iter().sum();
    BackgroundSet {
        rows: DMatrix::from_fn(k, d, |_, _| rng.random_range(-2.0..2.0)),
        weights: raw.iter().map(|w| w / total).collect(),
    }
}

/// Shapley values by averaging marginal contributions over all `d!` orders.
fn brute_force_shapley(f: fn(&[f64]) -> f64, row: &[f64], bg: &BackgroundSet) -> Vec<f64> {
    let d = row.len();
    let value: Vec<f64> = (0..1usize << d)
        .map(|mask| {
            (0..bg.len())
                .map(|b| {
                    let z: Vec<f64> = (0..d)
                        .map(|i| if mask >> i & 1 == 1 { row[i] } else { bg.rows[(b, i)] })
                        .collect();
                    bg.weights[b] * f(&z)
                })
                .sum()
        })
        .collect();
    let mut phi = vec![0.0; d];
    let mut order: Vec<usize> = (0..d).collect();
    let mut count = 0usize;
    permute(&mut order, 0, &mut |o: &[usize]| {
        let mut mask = 0usize;
        for &i in o {
            let next = mask | 1 << i;
            phi[i] += value[next] - value[mask];
            mask = next;
        }
        count += 1;
    });
    phi.iter().map(|v| v / count as f64).collect()
}

fn permute(v: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        visit(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, visit);
        v.swap(k, i);
    }
}

#[test]
fn criterion_07_kernel_shap() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);

    let d = 8;
    let bg = weighted_background(&mut rng, 5, d);
    let mut brute_diff = 0.0_f64;
    for _ in 0..3 {
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let res = kernel_shap(&Nonlinear(d), &row, &bg, &ShapOptions::default(), 0).unwrap();
        assert!(res.exact);
        let oracle = brute_force_shapley(Nonlinear::eval, &row, &bg);
        for (a, b) in res.phi.iter().zip(&oracle) {
            brute_diff = brute_diff.max((a - b).abs());
        }
    }

    let mut linear_diff = 0.0_f64;
    for (d, force_sampling) in [(6, false), (20, true)] {
        let model = Linear {
            w: (0..d).map(|_| rng.random_range(-3.0..3.0)).collect(),
            c: 1.5,
        };
        let bg = weighted_background(&mut rng, 7, d);
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let opts = ShapOptions {
            n_coalitions: None,
            force_sampling,
        };
        let res = kernel_shap(&model, &row, &bg, &opts, 1).unwrap();
        for i in 0..d {
            let mean: f64 = (0..bg.len()).map(|b| bg.weights[b] * bg.rows[(b, i)]).sum();
            linear_diff = linear_diff.max((res.phi[i] - model.w[i] * (row[i] - mean)).abs());
        }
    }

    let mut local = 0.0_f64;
    for d in [8, 20] {
        let bg = weighted_background(&mut rng, 6, d);
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let res = kernel_shap(&Nonlinear(d), &row, &bg, &ShapOptions::default(), 2).unwrap();
        local = local.max((res.base_value + res.phi.iter().sum::<f64>() - Nonlinear::eval(&row)).abs());
    }

    report(
        7,
        "kernel SHAP",
        brute_diff < SHAP_BRUTE_TOL && linear_diff < SHAP_LINEAR_TOL && local < SHAP_LOCAL_TOL,
        format!(
            "brute force d=8 max diff {brute_diff:.1e} < {SHAP_BRUTE_TOL:e}; linear {linear_diff:.1e} < {SHAP_LINEAR_TOL:e}; \
             local accuracy {local:.1e} < {SHAP_LOCAL_TOL:e}"
        ),
    );
}

// ---------------------------------------------------------------- 8

const ELASTICITY_TOL: f64 = 0.05;
const DUMMY_TOL: f64 = 1e-6;
const TRUE_ELASTICITY: [f64; 3] = [0.4, 0.25, 0.15];

/// `exp(0.2) · Π_l a_l^{w_l}` over the three lags of topic `a`; topic `b`
/// is ignored.
struct ConstantElasticity;

impl Predictor for ConstantElasticity {
    fn predict_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(x.row_iter()
            .map(|r| (0.2 + (0..3).map(|l| TRUE_ELASTICITY[l] * r[l].ln()).sum::<f64>()).exp())
            .collect())
    }
    fn input_width(&self) -> usize {
        7
    }
}

#[test]
fn criterion_08_elasticity() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let meta = |t: &str, l: usize| FeatureColumnMeta {
        symbol: FeatureSymbol::SviAnnualLag,
        topic_or_variable: Some(t.into()),
        lag_years: Some(l),
        month_j: None,
    };
    let mut columns: Vec<FeatureColumnMeta> = (1..=3)
        .map(|l| meta("a", l))
        .chain((1..=3).map(|l| meta("b", l)))
        .collect();
    columns.push(FeatureColumnMeta {
        symbol: FeatureSymbol::CountryId,
        topic_or_variable: None,
        lag_years: None,
        month_j: None,
    });
    let n = 24;
    let matrix = FeatureMatrix {
        rows: (0..n)
            .map(|r| RowKey {
                country: r % 2,
                year: 2000 + (r / 2) as i32,
                month_j: 0,
            })
            .collect(),
        x: DMatrix::from_fn(n, 7, |r, c| {
            if c == 6 {
                (r % 2) as f64
            } else {
                rng.random_range(5.0..95.0)
            }
        }),
        columns,
        y: vec![Some(1.0); n],
        config: ConfigId::AGT,
        tau: 3,
        countries: vec!["AA".into(), "BB".into()],
    };
    let perturb = Perturbation {
        mean: 0.01,
        std: 0.005,
        n_draws: 64,
    };
    let target: f64 = TRUE_ELASTICITY.iter().sum();
    let mut worst = 0.0_f64;
    let mut dummy = 0.0_f64;
    for c in 0..2 {
        let a = expected_elasticity(&ConstantElasticity, &matrix, c, "a", &perturb, 9).unwrap();
        worst = worst.max((a.eta - target).abs());
        let b = expected_elasticity(&ConstantElasticity, &matrix, c, "b", &perturb, 9).unwrap();
        dummy = dummy.max(b.eta.abs());
    }
    report(
        8,
        "elasticity estimator",
        worst <= ELASTICITY_TOL && dummy < DUMMY_TOL,
        format!("true {target}, max error {worst:.4} <= {ELASTICITY_TOL}; dummy |eta| {dummy:.1e} < {DUMMY_TOL:e}"),
    );
}

// ---------------------------------------------------------------- 9

const SHIFT_MIN_R: f64 = 0.999;
const P_VALUE_TOL: f64 = 1e-9;

/// Two-sided p-value by Simpson integration of the Student-t density with
/// `n − 2` degrees of freedom.
fn p_value_oracle(r: f64, n: usize) -> f64 {
    let nu = n - 2;
    let t = (r * ((nu as f64) / (1.0 - r * r)).sqrt()).abs();
    // Γ((ν+1)/2) / Γ(ν/2) by the two-step recursion
    let mut ratio = if nu % 2 == 1 {
        1.0 / std::f64::consts::PI.sqrt()
    } else {
        std::f64::consts::PI.sqrt() / 2.0
    };
    let mut k = if nu % 2 == 1 { 1 } else { 2 };
    while k < nu {
        ratio *= (k as f64 + 1.0) / k as f64;
        k += 2;
    }
    let nu_f = nu as f64;
    let c = ratio / (nu_f * std::f64::consts::PI).sqrt();
    let pdf = |s: f64| c * (1.0 + s * s / nu_f).powf(-(nu_f + 1.0) / 2.0);
    let steps = 200_000;
    let h = t / steps as f64;
    let mut acc = pdf(0.0) + pdf(t);
    for i in 1..steps {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(i as f64 * h);
    }
    1.0 - 2.0 * acc * h / 3.0
}

#[test]
fn criterion_09_lagged_correlation() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let z = Normal::new(0.0, 1.0).unwrap();
    let true_lag = 3;
    let mut v = 0.0;
    let a: Vec<f64> = (0..150)
        .map(|_| {
            v = 0.3 * v + z.sample(&mut rng);
            v
        })
        .collect();
    // b[t] = a[t − 3]
    let b: Vec<f64> = (0..150)
        .map(|t| {
            if t >= true_lag {
                a[t - true_lag]
            } else {
                z.sample(&mut rng)
            }
        })
        .collect();
    let lags = lagged_correlation(&a, &b, 6).unwrap();
    let top = lags[0];

    let mut p_diff = 0.0_f64;
    for (r, n) in [
        (0.1, 10),
        (0.3, 30),
        (-0.5, 12),
        (0.8, 25),
        (0.05, 200),
        (-0.42, 17),
        (0.6, 7),
    ] {
        p_diff = p_diff.max((correlation_p_value(r, n) - p_value_oracle(r, n)).abs());
    }
    report(
        9,
        "lagged correlation",
        top.lag == true_lag as i64 && top.r > SHIFT_MIN_R && p_diff < P_VALUE_TOL,
        format!(
            "top lag {} (true {true_lag}), r {:.6} > {SHIFT_MIN_R}; p-value max diff {p_diff:.1e} < {P_VALUE_TOL:e}",
            top.lag, top.r
        ),
    );
}

// ---------------------------------------------------------------- 10

const RW_TOLERANCE: f64 = 1.25;
const E2E_TIME_LIMIT: Duration = Duration::from_secs(30 * 60);

fn design_panel(kind: DgpKind, coefficients: Vec<f64>, intercept: f64, lag_months: usize, seed: u64) -> Panel {
    let spec = SyntheticSpec {
        countries: 8,
        start_year: 2005,
        end_year: 2019,
        k_s: 4,
        dgp: Dgp {
            kind,
            coefficients,
            ar_rho: 0.5,
            noise_sigma: 2.0,
            intercept,
            lag_months,
        },
        seed,
        samples: 5,
        sample_noise: 2.0,
    };
    generate_synthetic_panel(&spec, seed).unwrap().0
}

/// Monthly SVI of every topic of one country as indicator columns.
fn svi_indicators(panel: &Panel, country: usize) -> DMatrix<f64> {
    let months = 12 * panel.n_years();
    DMatrix::from_fn(months, panel.n_topics(), |m, k| panel.monthly_svi(country, k)[m])
}

#[test]
fn criterion_10_config_ordering() {
    let spec = TrainSpec {
        seed: 10,
        ..TrainSpec::default()
    };
    let split = SplitSpec::default();
    let ols = OlsOptions::default();

    // target driven by last year's search volume
    let start = Instant::now();
    let svi_panel = design_panel(DgpKind::Linear, vec![1.0, 0.6, 0.4, 0.0], 0.0, 12, 31);
    let eval = evaluate_configs(&svi_panel, &ConfigId::ALL, 3, &split, &spec, &ols).unwrap();
    let agt = eval.summary(ConfigId::AGT, ModelFamily::Mlp).unwrap().mape;
    let lag_rd = eval.summary(ConfigId::LagRD, ModelFamily::Mlp).unwrap().mape;

    let matrix = assemble(&svi_panel, ConfigId::AGT, 3).unwrap();
    let model = train_ensemble(&matrix, &spec).unwrap();
    let table = ElasticityTable::compute(&model, &matrix, svi_panel.topics(), &Perturbation::default(), 10).unwrap();
    let mut disagg_runs = 0;
    for c in 0..svi_panel.n_countries() {
        let (anchors, _) = annual_anchors(&svi_panel, c, Some(&model)).unwrap();
        let x = svi_indicators(&svi_panel, c);
        chow_lin(&anchors, &x, &ChowLinOptions::default()).unwrap();
        sparse_td(&anchors, &x, &SparseTdOptions::default()).unwrap();
        nn_elasticity_disagg(&svi_panel, c, &anchors, &table).unwrap();
        disagg_runs += 3;
    }
    let elapsed = start.elapsed();

    // target unrelated to search volume
    let rw_panel = design_panel(DgpKind::RandomWalk, vec![], 100.0, 0, 32);
    let rw = evaluate_configs(&rw_panel, &ConfigId::ALL, 3, &split, &spec, &ols).unwrap();
    let mut rw_ok = true;
    let mut rw_notes = Vec::new();
    for family in [ModelFamily::Mlp, ModelFamily::Ols] {
        let best = ConfigId::ALL
            .iter()
            .map(|&c| rw.summary(c, family).unwrap().mape)
            .fold(f64::INFINITY, f64::min);
        let lag = rw.summary(ConfigId::LagRD, family).unwrap().mape;
        rw_ok &= lag <= RW_TOLERANCE * best;
        rw_notes.push(format!("{} LagRD {lag:.2}% vs best {best:.2}%", family.name()));
    }

    report(
        10,
        "config ordering",
        agt < lag_rd && rw_ok && elapsed < E2E_TIME_LIMIT,
        format!(
            "SVI-driven MLP MAPE AGT {agt:.2}% < LagRD {lag_rd:.2}%; random walk {} (tolerance x{RW_TOLERANCE}); \
             end-to-end 7 configs x 2 families + {disagg_runs} disaggregations in {:.0}s",
            rw_notes.join(", "),
            secs(elapsed)
        ),
    );
}

// ---------------------------------------------------------------- 11

const TELESCOPE_TOL: f64 = 1e-12;

struct RandomNet(MlpParams);

impl Predictor for RandomNet {
    fn predict_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.0.predict(x)
    }
    fn input_width(&self) -> usize {
        self.0.arch.input_width
    }
}

#[test]
fn criterion_11_telescoping() {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let tau = 2;
    let mut worst = 0.0_f64;
    let mut cases = 0;
    while cases < 50 {
        let panel = random_panel(&mut rng);
        if panel.n_years() <= tau {
            continue;
        }
        let layout = assemble_svi_sum(&panel, tau).unwrap();
        let arch =
            MlpArchitecture::with_hidden(vec![16, 8], layout.n_cols(), layout.country_column().unwrap(), 1).unwrap();
        let mut params = MlpParams::init(&arch, &mut rng);
        for layer in &mut params.hidden {
            layer.bn.running_mean = DVector::from_fn(layer.bias.len(), |_, _| rng.random_range(0.0..50.0));
            layer.bn.running_var = DVector::from_fn(layer.bias.len(), |_, _| rng.random_range(100.0..2000.0));
        }
        let net = RandomNet(params);
        let year = panel.start_year() + rng.random_range(tau as i32..panel.n_years() as i32);
        let res = corrupted_input_contributions(&net, &panel, tau, 0, year).unwrap();
        let total: f64 = res.contributions.iter().sum();
        let scale = res.full.abs().max(res.empty.abs()).max(1.0);
        worst = worst.max((total - (res.full - res.empty)).abs() / scale);
        cases += 1;
    }
    report(
        11,
        "telescoping identity",
        worst < TELESCOPE_TOL,
        format!("50 inputs, max |sum - (f(full) - f(empty))| / scale {worst:.1e} < {TELESCOPE_TOL:e}"),
    );
}

// ---------------------------------------------------------------- 12

#[test]
fn criterion_12_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::write_tiny_project(dir.path());
    let outs = [dir.path().join("a"), dir.path().join("b")];
    let mut codes = Vec::new();
    for out in &outs {
        for cmd in common::PIPELINE {
            codes.push((cmd, common::run_cli(&cfg, out, cmd)));
        }
    }
    let a = common::csv_files(&outs[0]);
    let b = common::csv_files(&outs[1]);
    let differing: Vec<_> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let all_ok = codes.iter().all(|(_, c)| *c == 0);
    report(
        12,
        "determinism",
        all_ok && differing.is_empty() && !a.is_empty(),
        format!(
            "{} CSVs from {} commands run twice, differing {:?}, non-zero exits {:?}",
            a.len(),
            common::PIPELINE.len(),
            differing,
            codes.iter().filter(|(_, c)| *c != 0).collect::<Vec<_>>()
        ),
    );
}
