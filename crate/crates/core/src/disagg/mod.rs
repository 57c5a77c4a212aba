//! Annual-to-monthly temporal disaggregation.
//!
//! Monthly vectors are in time order (January first) and span whole years,
//! so the aggregation matrix is `A = I_n ⊗ 1ᵀ₁₂`.

mod chowlin;
mod corrupted;
mod nnalloc;
mod sparse;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::pearson;

pub use chowlin::{chow_lin, chow_lin_fixed_rho, default_rho_grid, ChowLinFit, ChowLinOptions};
pub use corrupted::{corrupted_input_contributions, corrupted_input_disagg, CorruptedInputResult};
pub use nnalloc::{annual_anchors, nn_elasticity_disagg, AllocationReport};
pub use sparse::{sparse_td, LambdaSelection, SparseTdFit, SparseTdOptions};

/// `A = I_n ⊗ 1ᵀ₁₂`, never materialized unless asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AggregationMatrix {
    pub n_years: usize,
}

impl AggregationMatrix {
    pub fn new(n_years: usize) -> Self {
        Self { n_years }
    }

    /// Yearly sums of a monthly vector.
    pub fn apply(&self, monthly: &[f64]) -> Result<Vec<f64>> {
        if monthly.len() != 12 * self.n_years {
            return Err(Error::WidthMismatch {
                expected: 12 * self.n_years,
                actual: monthly.len(),
            });
        }
        Ok(monthly.chunks(12).map(|c| c.iter().sum()).collect())
    }

    /// `A · X` for a `12n × p` monthly design.
    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != 12 * self.n_years {
            return Err(Error::WidthMismatch {
                expected: 12 * self.n_years,
                actual: x.nrows(),
            });
        }
        Ok(DMatrix::from_fn(self.n_years, x.ncols(), |t, j| {
            (0..12).map(|i| x[(12 * t + i, j)]).sum()
        }))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(
            self.n_years,
            12 * self.n_years,
            |t, i| {
                if i / 12 == t {
                    1.0
                } else {
                    0.0
                }
            },
        )
    }
}

/// Stationary AR(1) covariance `σ²/(1−ρ²) · ρ^|i−j|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Covariance {
    pub rho: f64,
    pub sigma2: f64,
    pub dim: usize,
}

impl Ar1Covariance {
    pub fn new(rho: f64, sigma2: f64, dim: usize) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(Error::OutOfRange(format!("AR(1) coefficient {rho} outside (-1, 1)")));
        }
        if !(sigma2 > 0.0) {
            return Err(Error::OutOfRange(format!(
                "innovation variance {sigma2} must be positive"
            )));
        }
        Ok(Self { rho, sigma2, dim })
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.sigma2 / (1.0 - self.rho * self.rho) * self.rho.powi(i.abs_diff(j) as i32)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.entry(i, j))
    }

    /// `A V_m Aᵀ` for `dim = 12n`.
    pub fn aggregated(&self) -> Result<DMatrix<f64>> {
        if !self.dim.is_multiple_of(12) {
            return Err(Error::InvalidInput(format!("{} months is not whole years", self.dim)));
        }
        let n = self.dim / 12;
        // entries depend only on |i−j|; accumulate the 12×12 block sums by lag
        let lag_sum = |year_gap: usize| -> f64 {
            let mut s = 0.0;
            for a in 0..12 {
                for b in 0..12 {
                    s += self.entry(12 * year_gap + a, b);
                }
            }
            s
        };
        let sums: Vec<f64> = (0..n).map(lag_sum).collect();
        Ok(DMatrix::from_fn(n, n, |s, t| sums[s.abs_diff(t)]))
    }

    /// `V_m Aᵀ`, a `12n × n` matrix.
    pub fn times_aggregation_t(&self) -> DMatrix<f64> {
        let n = self.dim / 12;
        DMatrix::from_fn(self.dim, n, |i, t| (0..12).map(|b| self.entry(i, 12 * t + b)).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisaggMethod {
    ChowLin,
    SpTd,
    NnElasticity,
    CorruptedInput,
}

impl DisaggMethod {
    pub const ALL: [DisaggMethod; 4] = [
        DisaggMethod::ChowLin,
        DisaggMethod::SpTd,
        DisaggMethod::NnElasticity,
        DisaggMethod::CorruptedInput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DisaggMethod::ChowLin => "chow_lin",
            DisaggMethod::SpTd => "sp_td",
            DisaggMethod::NnElasticity => "nn_elasticity",
            DisaggMethod::CorruptedInput => "corrupted_input",
        }
    }
}

impl fmt::Display for DisaggMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DisaggMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DisaggMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown disaggregation method `{s}`")))
    }
}

/// Monthly estimates for consecutive whole years of one country.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySeries {
    pub country: String,
    pub method: DisaggMethod,
    pub start_year: i32,
    /// Twelve values per year, January first.
    pub values: Vec<f64>,
    /// Annual figure each year is constrained to (or compared against).
    pub anchors: Vec<f64>,
    /// Whether the values were scaled to the anchors.
    pub normalized: bool,
}

impl MonthlySeries {
    pub fn n_years(&self) -> usize {
        self.anchors.len()
    }

    pub fn years(&self) -> impl Iterator<Item = i32> + '_ {
        (0..self.n_years()).map(move |i| self.start_year + i as i32)
    }

    /// Value for a calendar month (1 = January).
    pub fn value(&self, year: i32, month: u32) -> Option<f64> {
        let y = usize::try_from(year - self.start_year).ok()?;
        if !(1..=12).contains(&month) || y >= self.n_years() {
            return None;
        }
        Some(self.values[12 * y + month as usize - 1])
    }

    pub fn annual_sums(&self) -> Vec<f64> {
        self.values.chunks(12).map(|c| c.iter().sum()).collect()
    }

    /// Largest `|Σ months − anchor| / |anchor|` over years.
    pub fn max_sum_violation(&self) -> f64 {
        self.annual_sums()
            .iter()
            .zip(&self.anchors)
            .map(|(s, a)| (s - a).abs() / a.abs())
            .fold(0.0, f64::max)
    }

    pub fn negative_months(&self) -> usize {
        self.values.iter().filter(|v| **v < 0.0).count()
    }

    /// Keys `(year, month)` with values, in time order.
    pub fn entries(&self) -> impl Iterator<Item = ((i32, u32), f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, &v)| ((self.start_year + (i / 12) as i32, (i % 12) as u32 + 1), v))
    }
}

/// Writes `country,year,month,value,method,normalized`.
pub fn write_monthly_csv(path: &Path, series: &[MonthlySeries], comment: Option<&str>) -> Result<()> {
    let mut w = crate::csvout::Writer::create(path, comment)?;
    w.record(["country", "year", "month", "value", "method", "normalized"])?;
    for s in series {
        for ((year, month), v) in s.entries() {
            w.record([
                s.country.clone(),
                year.to_string(),
                month.to_string(),
                v.to_string(),
                s.method.name().to_owned(),
                s.normalized.to_string(),
            ])?;
        }
    }
    w.finish()
}

/// Reads a file written by [`write_monthly_csv`]. Anchors are recovered as
/// yearly sums.
pub fn read_monthly_csv(path: &Path) -> Result<Vec<MonthlySeries>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Csv {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
    let schema = |m: String| Error::Schema {
        path: path.to_owned(),
        message: m,
    };
    type Key = (String, DisaggMethod);
    let mut grouped: BTreeMap<Key, (bool, BTreeMap<(i32, u32), f64>)> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Csv {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        if rec.len() != 6 {
            return Err(schema(format!("expected 6 fields, found {}", rec.len())));
        }
        let year: i32 = rec[1].parse().map_err(|_| schema(format!("bad year `{}`", &rec[1])))?;
        let month: u32 = rec[2].parse().map_err(|_| schema(format!("bad month `{}`", &rec[2])))?;
        let value: f64 = rec[3].parse().map_err(|_| schema(format!("bad value `{}`", &rec[3])))?;
        let method: DisaggMethod = rec[4].parse()?;
        let normalized = &rec[5] == "true";
        let entry = grouped
            .entry((rec[0].to_owned(), method))
            .or_insert((normalized, BTreeMap::new()));
        entry.1.insert((year, month), value);
    }
    grouped
        .into_iter()
        .map(|((country, method), (normalized, cells))| {
            let start_year = cells.keys().next().map(|k| k.0).unwrap_or_default();
            let values: Vec<f64> = cells.values().copied().collect();
            let contiguous = cells
                .keys()
                .enumerate()
                .all(|(i, &(y, m))| y == start_year + (i / 12) as i32 && m == (i % 12) as u32 + 1);
            if !contiguous || !values.len().is_multiple_of(12) {
                return Err(Error::NonContiguousMonths {
                    path: path.to_owned(),
                    message: format!("{country}/{method} does not cover whole consecutive years"),
                });
            }
            let anchors = values.chunks(12).map(|c| c.iter().sum()).collect();
            Ok(MonthlySeries {
                country,
                method,
                start_year,
                values,
                anchors,
                normalized,
            })
        })
        .collect()
}

/// Pearson correlations between two methods pooled over shared cells.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodComparison {
    pub method_a: DisaggMethod,
    pub method_b: DisaggMethod,
    pub r_levels: f64,
    pub r_growth: f64,
    pub n: usize,
}

/// Pairwise comparison of every method pair present in `series`; growth
/// rates are taken within each country series before pooling.
pub fn compare_methods(series: &[MonthlySeries]) -> Result<Vec<MethodComparison>> {
    let mut methods: Vec<DisaggMethod> = series.iter().map(|s| s.method).collect();
    methods.sort();
    methods.dedup();
    let mut out = Vec::new();
    for (i, &a) in methods.iter().enumerate() {
        for &b in &methods[i + 1..] {
            let (mut la, mut lb, mut ga, mut gb) = (vec![], vec![], vec![], vec![]);
            for sa in series.iter().filter(|s| s.method == a) {
                let Some(sb) = series.iter().find(|s| s.method == b && s.country == sa.country) else {
                    continue;
                };
                let pairs: Vec<(f64, f64)> = sa
                    .entries()
                    .filter_map(|((y, m), va)| sb.value(y, m).map(|vb| (va, vb)))
                    .collect();
                for w in pairs.windows(2) {
                    if w[0].0 != 0.0 && w[0].1 != 0.0 {
                        ga.push(w[1].0 / w[0].0 - 1.0);
                        gb.push(w[1].1 / w[0].1 - 1.0);
                    }
                }
                for (x, y) in pairs {
                    la.push(x);
                    lb.push(y);
                }
            }
            if la.len() < 3 {
                continue;
            }
            out.push(MethodComparison {
                method_a: a,
                method_b: b,
                r_levels: pearson(&la, &lb).unwrap_or(f64::NAN),
                r_growth: pearson(&ga, &gb).unwrap_or(f64::NAN),
                n: la.len(),
            });
        }
    }
    Ok(out)
}

pub fn write_comparison_csv(path: &Path, rows: &[MethodComparison], comment: Option<&str>) -> Result<()> {
    let mut w = crate::csvout::Writer::create(path, comment)?;
    w.record(["method_a", "method_b", "r_levels", "r_growth", "n"])?;
    for r in rows {
        w.record([
            r.method_a.name().to_owned(),
            r.method_b.name().to_owned(),
            r.r_levels.to_string(),
            r.r_growth.to_string(),
            r.n.to_string(),
        ])?;
    }
    w.finish()
}

/// Completes a fitted annual regression into months:
/// `ŷ_m = X_m θ + V_m Aᵀ V_a⁻¹ (y − X_a θ)`.
pub(crate) fn distribute_residuals(
    x_m: &DMatrix<f64>,
    theta: &DVector<f64>,
    y: &DVector<f64>,
    x_a: &DMatrix<f64>,
    cov: &Ar1Covariance,
) -> Result<Vec<f64>> {
    let v_a = cov.aggregated()?;
    let chol = v_a
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("aggregated covariance at rho = {}", cov.rho)))?;
    let resid = y - x_a * theta;
    let w = chol.solve(&resid);
    let monthly = x_m * theta + cov.times_aggregation_t() * w;
    Ok(monthly.iter().copied().collect())
}
