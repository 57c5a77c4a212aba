//! Out-of-sample errors and lagged-correlation validation.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::baselines::{fit_ols, OlsOptions};
use crate::dataio::{calendar_month, Panel};
use crate::error::{Error, Result};
use crate::features::{assemble, ConfigId, FeatureMatrix};
use crate::neuralnet::{train_ensemble, TrainSpec};

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// Mean absolute percentage error, in percent.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    if truth.contains(&0.0) {
        return Err(Error::ZeroDenominator("MAPE with a zero true value".into()));
    }
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| ((p - t) / t).abs()).sum();
    Ok(100.0 * s / pred.len() as f64)
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::InvalidInput("empty error vectors".into()));
    }
    if a.len() != b.len() {
        return Err(Error::WidthMismatch {
            expected: b.len(),
            actual: a.len(),
        });
    }
    Ok(())
}

/// Pearson correlation; fails on a constant input.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ConstantSeries);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `H0: r = 0` from `t = r √((n−2)/(1−r²))` with
/// `n − 2` degrees of freedom.
pub fn correlation_p_value(r: f64, n: usize) -> f64 {
    if n < 3 {
        return 1.0;
    }
    let df = (n - 2) as f64;
    let r2 = r * r;
    if r2 >= 1.0 {
        return 0.0;
    }
    let t2 = r2 * df / (1.0 - r2);
    // P(|T| > |t|) = I_{df/(df+t²)}(df/2, 1/2)
    beta_reg(df / 2.0, 0.5, df / (df + t2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagCorrelation {
    /// Positive: `a` leads, pairing `a[t − lag]` with `b[t]`.
    pub lag: i64,
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

impl LagCorrelation {
    pub fn is_significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Correlations at every lag in `[−max_lag, max_lag]` on the overlapping
/// samples, sorted by decreasing `|r|` (ties by lag).
pub fn lagged_correlation(a: &[f64], b: &[f64], max_lag: usize) -> Result<Vec<LagCorrelation>> {
    let n = a.len().min(b.len());
    if n < 2 * max_lag + 3 || n - max_lag < max_lag + 3 {
        return Err(Error::NotEnoughRows(format!(
            "overlap of {n} samples is too short for lags up to {max_lag}"
        )));
    }
    let mut out = Vec::with_capacity(2 * max_lag + 1);
    for lag in -(max_lag as i64)..=(max_lag as i64) {
        let (xa, xb): (Vec<f64>, Vec<f64>) = (0..n as i64)
            .filter_map(|t| {
                let s = t - lag;
                (s >= 0 && (s as usize) < a.len() && (t as usize) < b.len()).then(|| (a[s as usize], b[t as usize]))
            })
            .unzip();
        let r = pearson(&xa, &xb)?;
        out.push(LagCorrelation {
            lag,
            r,
            p_value: correlation_p_value(r, xa.len()),
            n: xa.len(),
        });
    }
    out.sort_by(|x, y| y.r.abs().total_cmp(&x.r.abs()).then(x.lag.cmp(&y.lag)));
    Ok(out)
}

/// `g_t = (v_t − v_{t−1}) / v_{t−1}`.
pub fn growth_rates(values: &[f64]) -> Result<Vec<f64>> {
    values
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            if w[0] == 0.0 {
                Err(Error::ZeroDenominator(format!(
                    "growth rate at index {} divides by zero",
                    i + 1
                )))
            } else {
                Ok((w[1] - w[0]) / w[0])
            }
        })
        .collect()
}

/// Writes `series_a,series_b,lag,r,p,n`.
pub fn write_lag_csv(
    path: &Path,
    series_a: &str,
    series_b: &str,
    rows: &[LagCorrelation],
    comment: Option<&str>,
) -> Result<()> {
    let mut w = crate::csvout::Writer::create(path, comment)?;
    w.record(["series_a", "series_b", "lag", "r", "p", "n"])?;
    for r in rows {
        w.record([
            series_a.to_owned(),
            series_b.to_owned(),
            r.lag.to_string(),
            r.r.to_string(),
            r.p_value.to_string(),
            r.n.to_string(),
        ])?;
    }
    w.finish()
}

/// Time-ordered holdout: the last `test_years` panel years are test data and
/// everything before trains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub test_years: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { test_years: 3 }
    }
}

impl SplitSpec {
    /// First test year of `panel`.
    pub fn cutoff(&self, panel: &Panel) -> Result<i32> {
        if self.test_years == 0 || self.test_years >= panel.n_years() {
            return Err(Error::InvalidInput(format!(
                "{} test years for a {}-year panel",
                self.test_years,
                panel.n_years()
            )));
        }
        Ok(panel.end_year() - self.test_years as i32 + 1)
    }

    /// Row indices `(train, test)` of `matrix`; only targeted rows appear.
    pub fn split(&self, matrix: &FeatureMatrix, cutoff: i32) -> (Vec<usize>, Vec<usize>) {
        (0..matrix.n_rows())
            .filter(|&r| matrix.y[r].is_some())
            .partition(|&r| matrix.rows[r].year < cutoff)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Mlp,
    Ols,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Mlp => "mlp",
            ModelFamily::Ols => "ols",
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One test-row prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub config: ConfigId,
    pub family: ModelFamily,
    pub country: String,
    pub year: i32,
    /// Calendar month of the nowcast row.
    pub month: u32,
    pub prediction: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigSummary {
    pub config: ConfigId,
    pub family: ModelFamily,
    pub rmse: f64,
    pub mape: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub records: Vec<ErrorRecord>,
    pub summaries: Vec<ConfigSummary>,
}

impl Evaluation {
    pub fn summary(&self, config: ConfigId, family: ModelFamily) -> Option<&ConfigSummary> {
        self.summaries.iter().find(|s| s.config == config && s.family == family)
    }

    /// `config,family,country,year,month,prediction,truth,abs_pct_error,sq_error`
    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut w = crate::csvout::Writer::create(path, comment)?;
        w.record([
            "config",
            "family",
            "country",
            "year",
            "month",
            "prediction",
            "truth",
            "abs_pct_error",
            "sq_error",
        ])?;
        for r in &self.records {
            w.record([
                r.config.name().to_owned(),
                r.family.name().to_owned(),
                r.country.clone(),
                r.year.to_string(),
                r.month.to_string(),
                r.prediction.to_string(),
                r.truth.to_string(),
                (100.0 * ((r.prediction - r.truth) / r.truth).abs()).to_string(),
                (r.prediction - r.truth).powi(2).to_string(),
            ])?;
        }
        w.finish()
    }
}

/// Trains the MLP ensemble and the OLS baseline for every configuration on
/// the same time-ordered split and scores the held-out rows.
pub fn evaluate_configs(
    panel: &Panel,
    configs: &[ConfigId],
    tau: usize,
    split: &SplitSpec,
    spec: &TrainSpec,
    ols: &OlsOptions,
) -> Result<Evaluation> {
    let cutoff = split.cutoff(panel)?;
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for &config in configs {
        let matrix = assemble(panel, config, tau)?;
        let (train, test) = split.split(&matrix, cutoff);
        if test.is_empty() {
            return Err(Error::NotEnoughRows(format!("no observed test rows for {config}")));
        }
        let train_m = matrix.select_rows(&train);
        let test_m = matrix.select_rows(&test);
        let truth = test_m.targets()?;

        let ensemble = train_ensemble(&train_m, spec)?;
        let ols_model = fit_ols(&train_m, ols)?;
        for (family, pred) in [
            (ModelFamily::Mlp, ensemble.predict(&test_m)?),
            (ModelFamily::Ols, ols_model.predict(&test_m)?),
        ] {
            summaries.push(ConfigSummary {
                config,
                family,
                rmse: rmse(&pred, &truth)?,
                mape: mape(&pred, &truth)?,
                n: truth.len(),
            });
            for ((key, p), t) in test_m.rows.iter().zip(&pred).zip(&truth) {
                records.push(ErrorRecord {
                    config,
                    family,
                    country: matrix.countries[key.country].clone(),
                    year: key.year,
                    month: calendar_month(key.month_j),
                    prediction: *p,
                    truth: *t,
                });
            }
        }
    }
    Ok(Evaluation { records, summaries })
}
