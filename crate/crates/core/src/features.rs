//! Predictor blocks and the seven configuration-specific design matrices.
//!
//! Every (country, year) contributes twelve rows, one per month index `j`
//! (`j = 0` is December, `j = 11` is January). All rows of a year share the
//! annual target. Column layout, when present, is always
//!
//! ```text
//! [AR targets | AR missing flags | annual SVI lags | SVI YTD | macro lags | month one-hot | country id]
//! ```
//!
//! with lag-major, topic/variable-minor ordering inside the lagged blocks.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataio::{MacroVar, Panel};
use crate::error::{Error, Result};

/// Default number of annual lags.
pub const DEFAULT_TAU: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConfigId {
    LagRD,
    Macros,
    AGT,
    MGT,
    AGTwRD,
    MGTwRD,
    AllVar,
}

/// Which blocks a configuration contains. The month/country block is always
/// present.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Blocks {
    pub ar: bool,
    pub svi_annual: bool,
    pub svi_ytd: bool,
    pub macros: bool,
}

impl ConfigId {
    pub const ALL: [ConfigId; 7] = [
        ConfigId::LagRD,
        ConfigId::Macros,
        ConfigId::AGT,
        ConfigId::MGT,
        ConfigId::AGTwRD,
        ConfigId::MGTwRD,
        ConfigId::AllVar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ConfigId::LagRD => "LagRD",
            ConfigId::Macros => "Macros",
            ConfigId::AGT => "AGT",
            ConfigId::MGT => "MGT",
            ConfigId::AGTwRD => "AGTwRD",
            ConfigId::MGTwRD => "MGTwRD",
            ConfigId::AllVar => "AllVar",
        }
    }

    pub fn blocks(self) -> Blocks {
        let (ar, svi_annual, svi_ytd, macros) = match self {
            ConfigId::LagRD => (true, false, false, false),
            ConfigId::Macros => (true, false, false, true),
            ConfigId::AGT => (false, true, false, false),
            ConfigId::MGT => (false, true, true, false),
            ConfigId::AGTwRD => (true, true, false, false),
            ConfigId::MGTwRD => (true, true, true, false),
            ConfigId::AllVar => (true, true, true, true),
        };
        Blocks {
            ar,
            svi_annual,
            svi_ytd,
            macros,
        }
    }

    /// Column symbols a matrix of this configuration may contain.
    pub fn permitted_symbols(self) -> Vec<FeatureSymbol> {
        let b = self.blocks();
        let mut out = Vec::new();
        if b.ar {
            out.extend([FeatureSymbol::ArTarget, FeatureSymbol::ArMissingFlag]);
        }
        if b.svi_annual {
            out.push(FeatureSymbol::SviAnnualLag);
        }
        if b.svi_ytd {
            out.push(FeatureSymbol::SviYtd);
        }
        if b.macros {
            out.push(FeatureSymbol::MacroLag);
        }
        out.extend([FeatureSymbol::MonthOnehot, FeatureSymbol::CountryId]);
        out
    }

    /// Number of columns for `tau` lags and `k_s` topics.
    pub fn width(self, tau: usize, k_s: usize) -> usize {
        let b = self.blocks();
        let k_z = MacroVar::ALL.len();
        usize::from(b.ar) * 2 * tau
            + usize::from(b.svi_annual) * tau * k_s
            + usize::from(b.svi_ytd) * k_s
            + usize::from(b.macros) * tau * k_z
            + 12
            + 1
    }
}

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ConfigId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConfigId::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown configuration `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSymbol {
    #[serde(rename = "AR_target")]
    ArTarget,
    #[serde(rename = "AR_missing_flag")]
    ArMissingFlag,
    #[serde(rename = "SVI_annual_lag")]
    SviAnnualLag,
    /// Yearly sums of SVI, current year (possibly partial) plus lags. Only used
    /// by the corrupted-input disaggregation model.
    #[serde(rename = "SVI_annual_sum")]
    SviAnnualSum,
    #[serde(rename = "SVI_ytd")]
    SviYtd,
    #[serde(rename = "macro_lag")]
    MacroLag,
    #[serde(rename = "month_onehot")]
    MonthOnehot,
    #[serde(rename = "country_id")]
    CountryId,
}

impl FeatureSymbol {
    pub fn tag(self) -> &'static str {
        match self {
            FeatureSymbol::ArTarget => "AR_target",
            FeatureSymbol::ArMissingFlag => "AR_missing_flag",
            FeatureSymbol::SviAnnualLag => "SVI_annual_lag",
            FeatureSymbol::SviAnnualSum => "SVI_annual_sum",
            FeatureSymbol::SviYtd => "SVI_ytd",
            FeatureSymbol::MacroLag => "macro_lag",
            FeatureSymbol::MonthOnehot => "month_onehot",
            FeatureSymbol::CountryId => "country_id",
        }
    }

    /// Columns that are rescaled before entering a model.
    pub fn is_continuous(self) -> bool {
        !matches!(self, FeatureSymbol::MonthOnehot | FeatureSymbol::CountryId)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureColumnMeta {
    pub symbol: FeatureSymbol,
    pub topic_or_variable: Option<String>,
    pub lag_years: Option<usize>,
    pub month_j: Option<usize>,
}

impl FeatureColumnMeta {
    fn plain(symbol: FeatureSymbol) -> Self {
        Self {
            symbol,
            topic_or_variable: None,
            lag_years: None,
            month_j: None,
        }
    }

    fn lagged(symbol: FeatureSymbol, lag: usize) -> Self {
        Self {
            lag_years: Some(lag),
            ..Self::plain(symbol)
        }
    }

    fn named(symbol: FeatureSymbol, name: &str, lag: Option<usize>) -> Self {
        Self {
            topic_or_variable: Some(name.to_owned()),
            lag_years: lag,
            ..Self::plain(symbol)
        }
    }

    /// Compact serialized form used for CSV headers, e.g.
    /// `SVI_annual_lag[topic_03;lag=2]`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(name) = &self.topic_or_variable {
            parts.push(name.clone());
        }
        if let Some(lag) = self.lag_years {
            parts.push(format!("lag={lag}"));
        }
        if let Some(j) = self.month_j {
            parts.push(format!("j={j}"));
        }
        if parts.is_empty() {
            self.symbol.tag().to_owned()
        } else {
            format!("{}[{}]", self.symbol.tag(), parts.join(";"))
        }
    }
}

impl fmt::Display for FeatureColumnMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub country: usize,
    pub year: i32,
    pub month_j: usize,
}

/// Configuration-specific design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<RowKey>,
    pub x: DMatrix<f64>,
    pub columns: Vec<FeatureColumnMeta>,
    /// `None` where the target is interpolated; such rows never train.
    pub y: Vec<Option<f64>>,
    pub config: ConfigId,
    pub tau: usize,
    /// Country names indexed by `RowKey::country`.
    pub countries: Vec<String>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn country_column(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.symbol == FeatureSymbol::CountryId)
    }

    /// Row indices of one country.
    pub fn country_rows(&self, country: usize) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&r| self.rows[r].country == country)
            .collect()
    }

    /// New matrix holding the selected rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            rows: idx.iter().map(|&i| self.rows[i]).collect(),
            x: self.x.select_rows(idx),
            columns: self.columns.clone(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            config: self.config,
            tau: self.tau,
            countries: self.countries.clone(),
        }
    }

    /// Rows with a training target.
    pub fn targeted(&self) -> FeatureMatrix {
        let idx: Vec<usize> = (0..self.n_rows()).filter(|&r| self.y[r].is_some()).collect();
        self.select_rows(&idx)
    }

    /// Target vector; fails if any row lacks a target.
    pub fn targets(&self) -> Result<Vec<f64>> {
        self.y
            .iter()
            .zip(&self.rows)
            .map(|(y, k)| {
                y.ok_or_else(|| {
                    Error::MissingData(format!(
                        "row {}/{}/j={} has no observed target",
                        self.countries[k.country], k.year, k.month_j
                    ))
                })
            })
            .collect()
    }

    /// Writes the matrix as CSV: row key, target, then one column per
    /// feature labelled with its serialized metadata.
    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut out = Vec::new();
        if let Some(c) = comment {
            writeln!(out, "# {c}").expect("write to vec");
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["country".to_owned(), "year".into(), "month_j".into(), "target".into()];
        header.extend(self.columns.iter().map(FeatureColumnMeta::label));
        w.write_record(&header).map_err(|e| csv_err(path, e))?;
        for (r, key) in self.rows.iter().enumerate() {
            let mut rec = vec![
                self.countries[key.country].clone(),
                key.year.to_string(),
                key.month_j.to_string(),
                self.y[r].map(|v| v.to_string()).unwrap_or_default(),
            ];
            rec.extend(self.x.row(r).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

fn check_history(panel: &Panel, year: i32, tau: usize) -> Result<()> {
    if tau == 0 {
        return Err(Error::InvalidInput("tau must be at least 1".into()));
    }
    if year - (tau as i32) < panel.start_year() || year > panel.end_year() {
        return Err(Error::InsufficientHistory {
            year,
            tau,
            start: panel.start_year(),
        });
    }
    Ok(())
}

fn check_country(panel: &Panel, country: usize) -> Result<()> {
    if country >= panel.n_countries() {
        return Err(Error::UnknownCountry(country));
    }
    Ok(())
}

/// `[y_{t-1} … y_{t-τ}, y'_{t-1} … y'_{t-τ}]` with 0/1 missing flags.
pub fn build_ar_block(panel: &Panel, country: usize, year: i32, tau: usize) -> Result<Vec<f64>> {
    check_country(panel, country)?;
    check_history(panel, year, tau)?;
    let lagged: Vec<_> = (1..=tau)
        .map(|l| panel.target(country, year - l as i32).expect("checked range"))
        .collect();
    Ok(lagged
        .iter()
        .map(|t| t.value)
        .chain(lagged.iter().map(|t| f64::from(u8::from(t.is_interpolated))))
        .collect())
}

/// Annual means of each topic for years `t-1 … t-τ`, lag-major.
pub fn build_annual_svi_block(panel: &Panel, country: usize, year: i32, tau: usize) -> Result<Vec<f64>> {
    check_country(panel, country)?;
    check_history(panel, year, tau)?;
    let mut out = Vec::with_capacity(tau * panel.n_topics());
    for lag in 1..=tau {
        for k in 0..panel.n_topics() {
            let months = svi_year(panel, country, k, year - lag as i32)?;
            out.push(months.iter().sum::<f64>() / 12.0);
        }
    }
    Ok(out)
}

fn svi_year(panel: &Panel, country: usize, topic: usize, year: i32) -> Result<&[f64]> {
    panel.svi(country, topic).year(year).ok_or_else(|| {
        Error::MissingData(format!(
            "no monthly SVI for {}/{} in {year}",
            panel.countries()[country],
            panel.topics()[topic]
        ))
    })
}

/// Year-to-date mean of each topic over the months of `year` before the
/// month indexed by `month_j`; all zeros in January (`j = 11`).
pub fn build_ytd_svi_block(panel: &Panel, country: usize, year: i32, month_j: usize) -> Result<Vec<f64>> {
    check_country(panel, country)?;
    if month_j > 11 {
        return Err(Error::OutOfRange(format!("month index {month_j} outside [0, 11]")));
    }
    // j' in j+1..=11 are calendar months 1..=(11 - j)
    let n = 11 - month_j;
    (0..panel.n_topics())
        .map(|k| {
            if n == 0 {
                return Ok(0.0);
            }
            let months = svi_year(panel, country, k, year)?;
            Ok(months[..n].iter().sum::<f64>() / n as f64)
        })
        .collect()
}

/// Lagged macro variables `t-1 … t-τ`, lag-major.
pub fn build_macro_block(panel: &Panel, country: usize, year: i32, tau: usize) -> Result<Vec<f64>> {
    check_country(panel, country)?;
    check_history(panel, year, tau)?;
    let mut out = Vec::with_capacity(tau * MacroVar::ALL.len());
    for lag in 1..=tau {
        for v in MacroVar::ALL {
            let y = year - lag as i32;
            out.push(
                panel
                    .macro_value(country, v, y)
                    .ok_or_else(|| Error::MissingData(format!("no {} for {y}", v.column())))?,
            );
        }
    }
    Ok(out)
}

/// Twelve-way month one-hot followed by the integer country id.
pub fn build_month_country_block(country: usize, month_j: usize, country_count: usize) -> Result<Vec<f64>> {
    if month_j > 11 {
        return Err(Error::OutOfRange(format!("month index {month_j} outside [0, 11]")));
    }
    if country >= country_count {
        return Err(Error::OutOfRange(format!(
            "country id {country} outside [0, {country_count})"
        )));
    }
    let mut out = vec![0.0; 13];
    out[month_j] = 1.0;
    out[12] = country as f64;
    Ok(out)
}

/// Yearly SVI sums used by the corrupted-input model: the current year summed
/// over its first `months_in_current` calendar months, then the full sums of
/// `t-1 … t-τ`. Lag-major.
pub fn build_svi_sum_block(
    panel: &Panel,
    country: usize,
    year: i32,
    tau: usize,
    months_in_current: usize,
) -> Result<Vec<f64>> {
    check_country(panel, country)?;
    check_history(panel, year, tau)?;
    if months_in_current > 12 {
        return Err(Error::OutOfRange(format!("{months_in_current} months in a year")));
    }
    let mut out = Vec::with_capacity((tau + 1) * panel.n_topics());
    for lag in 0..=tau {
        let n = if lag == 0 { months_in_current } else { 12 };
        for k in 0..panel.n_topics() {
            let months = svi_year(panel, country, k, year - lag as i32)?;
            out.push(months[..n].iter().sum());
        }
    }
    Ok(out)
}

fn column_metas(panel: &Panel, blocks: Blocks, tau: usize) -> Vec<FeatureColumnMeta> {
    let mut cols = Vec::new();
    if blocks.ar {
        cols.extend((1..=tau).map(|l| FeatureColumnMeta::lagged(FeatureSymbol::ArTarget, l)));
        cols.extend((1..=tau).map(|l| FeatureColumnMeta::lagged(FeatureSymbol::ArMissingFlag, l)));
    }
    if blocks.svi_annual {
        for l in 1..=tau {
            cols.extend(
                panel
                    .topics()
                    .iter()
                    .map(|t| FeatureColumnMeta::named(FeatureSymbol::SviAnnualLag, t, Some(l))),
            );
        }
    }
    if blocks.svi_ytd {
        cols.extend(
            panel
                .topics()
                .iter()
                .map(|t| FeatureColumnMeta::named(FeatureSymbol::SviYtd, t, None)),
        );
    }
    if blocks.macros {
        for l in 1..=tau {
            cols.extend(
                MacroVar::ALL
                    .iter()
                    .map(|v| FeatureColumnMeta::named(FeatureSymbol::MacroLag, v.column(), Some(l))),
            );
        }
    }
    cols.extend(month_country_metas());
    cols
}

fn month_country_metas() -> Vec<FeatureColumnMeta> {
    let mut cols: Vec<_> = (0..12)
        .map(|j| FeatureColumnMeta {
            month_j: Some(j),
            ..FeatureColumnMeta::plain(FeatureSymbol::MonthOnehot)
        })
        .collect();
    cols.push(FeatureColumnMeta::plain(FeatureSymbol::CountryId));
    cols
}

/// Feature row for one (country, year, month) under a configuration.
pub fn build_row(panel: &Panel, config: ConfigId, tau: usize, key: RowKey) -> Result<Vec<f64>> {
    let b = config.blocks();
    let mut row = Vec::with_capacity(config.width(tau, panel.n_topics()));
    if b.ar {
        row.extend(build_ar_block(panel, key.country, key.year, tau)?);
    }
    if b.svi_annual {
        row.extend(build_annual_svi_block(panel, key.country, key.year, tau)?);
    }
    if b.svi_ytd {
        row.extend(build_ytd_svi_block(panel, key.country, key.year, key.month_j)?);
    }
    if b.macros {
        row.extend(build_macro_block(panel, key.country, key.year, tau)?);
    }
    row.extend(build_month_country_block(
        key.country,
        key.month_j,
        panel.n_countries(),
    )?);
    Ok(row)
}

fn panel_keys(panel: &Panel, tau: usize) -> Result<Vec<RowKey>> {
    if panel.n_years() < tau + 1 {
        return Err(Error::InsufficientHistory {
            year: panel.end_year(),
            tau,
            start: panel.start_year(),
        });
    }
    let first = panel.start_year() + tau as i32;
    let mut keys = Vec::new();
    for country in 0..panel.n_countries() {
        for year in first..=panel.end_year() {
            keys.extend((0..12).map(|month_j| RowKey { country, year, month_j }));
        }
    }
    Ok(keys)
}

fn observed_target(panel: &Panel, key: &RowKey) -> Option<f64> {
    panel
        .target(key.country, key.year)
        .filter(|t| !t.is_interpolated)
        .map(|t| t.value)
}

/// Design matrix of every (country, year, month) row, including rows whose
/// target is interpolated (their `y` is `None`). Use for prediction.
pub fn assemble_all(panel: &Panel, config: ConfigId, tau: usize) -> Result<FeatureMatrix> {
    let keys = panel_keys(panel, tau)?;
    let columns = column_metas(panel, config.blocks(), tau);
    let mut data = Vec::with_capacity(keys.len() * columns.len());
    let mut y = Vec::with_capacity(keys.len());
    for key in &keys {
        data.extend(build_row(panel, config, tau, *key)?);
        y.push(observed_target(panel, key));
    }
    Ok(FeatureMatrix {
        x: DMatrix::from_row_slice(keys.len(), columns.len(), &data),
        rows: keys,
        columns,
        y,
        config,
        tau,
        countries: panel.countries().to_vec(),
    })
}

/// Training design matrix: twelve rows per (country, year) with an observed
/// target. Rows whose target was interpolated are left out.
pub fn assemble(panel: &Panel, config: ConfigId, tau: usize) -> Result<FeatureMatrix> {
    Ok(assemble_all(panel, config, tau)?.targeted())
}

/// Row of the corrupted-input model: SVI sums (current year over the first
/// `months_in_current` months) plus month one-hot `month_j` and country id.
pub fn corrupted_input_row(
    panel: &Panel,
    tau: usize,
    country: usize,
    year: i32,
    months_in_current: usize,
    month_j: usize,
) -> Result<Vec<f64>> {
    let mut row = build_svi_sum_block(panel, country, year, tau, months_in_current)?;
    row.extend(build_month_country_block(country, month_j, panel.n_countries())?);
    Ok(row)
}

/// Training matrix of the corrupted-input model: the AGT layout with yearly
/// sums instead of means and the full current year included as lag 0.
pub fn assemble_svi_sum(panel: &Panel, tau: usize) -> Result<FeatureMatrix> {
    let keys = panel_keys(panel, tau)?;
    let mut columns = Vec::new();
    for l in 0..=tau {
        columns.extend(
            panel
                .topics()
                .iter()
                .map(|t| FeatureColumnMeta::named(FeatureSymbol::SviAnnualSum, t, Some(l))),
        );
    }
    columns.extend(month_country_metas());
    let mut data = Vec::with_capacity(keys.len() * columns.len());
    let mut y = Vec::with_capacity(keys.len());
    for key in &keys {
        data.extend(corrupted_input_row(panel, tau, key.country, key.year, 12, key.month_j)?);
        y.push(observed_target(panel, key));
    }
    Ok(FeatureMatrix {
        x: DMatrix::from_row_slice(keys.len(), columns.len(), &data),
        rows: keys,
        columns,
        y,
        config: ConfigId::AGT,
        tau,
        countries: panel.countries().to_vec(),
    }
    .targeted())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{AnnualTarget, MacroSeries, SviSeries};
    use std::collections::BTreeMap;

    /// Hand-built panel: 2 countries, 2010..=2015, k_s topics, with monthly
    /// values supplied by `svi(c, k, month_index)`.
    fn panel_with(k_s: usize, svi: impl Fn(usize, usize, usize) -> f64, interpolated: &[(usize, i32)]) -> Panel {
        let countries = vec!["AA".to_owned(), "BB".to_owned()];
        let topics: Vec<String> = (0..k_s).map(|k| format!("t{k}")).collect();
        let (start, end) = (2010, 2015);
        let n_months = 6 * 12;
        let targets = countries
            .iter()
            .enumerate()
            .map(|(c, name)| {
                (start..=end)
                    .map(|year| AnnualTarget {
                        country: name.clone(),
                        year,
                        value: 100.0 + 10.0 * f64::from(year - start) + c as f64,
                        is_interpolated: interpolated.contains(&(c, year)),
                    })
                    .collect()
            })
            .collect();
        let svi_series = countries
            .iter()
            .enumerate()
            .map(|(c, name)| {
                topics
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        let series = (0..n_months).map(|m| svi(c, k, m)).collect();
                        SviSeries::from_samples(name.clone(), t.clone(), start, vec![series]).unwrap()
                    })
                    .collect()
            })
            .collect();
        let macros = countries
            .iter()
            .map(|name| {
                MacroVar::ALL
                    .iter()
                    .map(|&v| {
                        let obs: BTreeMap<i32, Option<f64>> = (start..=end)
                            .map(|y| (y, Some(v.index() as f64 * 100.0 + f64::from(y - start))))
                            .collect();
                        MacroSeries::impute(name.clone(), v, &obs, start..=end).unwrap()
                    })
                    .collect()
            })
            .collect();
        Panel::new(countries, topics, start, end, targets, svi_series, macros).unwrap()
    }

    fn simple_panel() -> Panel {
        panel_with(2, |_, _, m| (m % 12 + 1) as f64, &[])
    }

    #[test]
    fn ar_block_definition() {
        let p = panel_with(1, |_, _, _| 50.0, &[(0, 2012)]);
        assert_eq!(build_ar_block(&p, 0, 2014, 1).unwrap(), vec![130.0, 0.0]);
        assert_eq!(build_ar_block(&p, 0, 2014, 2).unwrap(), vec![130.0, 120.0, 0.0, 1.0]);
        assert_eq!(build_ar_block(&p, 0, 2014, 2).unwrap().len(), 4);
        // 2012 is interpolated: its flag is the second of the flag half
        assert_eq!(
            build_ar_block(&p, 0, 2014, 3).unwrap(),
            vec![130.0, 120.0, 110.0, 0.0, 1.0, 0.0]
        );
        let err = build_ar_block(&p, 0, 2012, 3).unwrap_err();
        assert!(matches!(err, Error::InsufficientHistory { .. }));
    }

    #[test]
    fn annual_svi_block() {
        let constant = panel_with(1, |_, _, _| 50.0, &[]);
        assert_eq!(build_annual_svi_block(&constant, 0, 2013, 1).unwrap(), vec![50.0]);
        let p = simple_panel();
        assert_eq!(build_annual_svi_block(&p, 0, 2013, 1).unwrap(), vec![6.5, 6.5]);

        let p = panel_with(2, |_, k, m| (k * 50 + m / 12) as f64, &[]);
        // ordering: (k1,l1), (k2,l1), (k1,l2), (k2,l2); year index of 2012 is 2
        let block = build_annual_svi_block(&p, 0, 2013, 2).unwrap();
        assert_eq!(block, vec![2.0, 52.0, 1.0, 51.0]);
    }

    #[test]
    fn ytd_block() {
        let p = simple_panel(); // month values 1..=12
        assert_eq!(build_ytd_svi_block(&p, 0, 2013, 11).unwrap(), vec![0.0, 0.0]);
        // February: January only
        assert_eq!(build_ytd_svi_block(&p, 0, 2013, 10).unwrap(), vec![1.0, 1.0]);
        // December: mean of Jan..Nov = 66 / 11
        assert_eq!(build_ytd_svi_block(&p, 0, 2013, 0).unwrap(), vec![6.0, 6.0]);

        let p = panel_with(1, |_, _, m| if m % 12 == 0 { 80.0 } else { 3.0 }, &[]);
        assert_eq!(build_ytd_svi_block(&p, 1, 2011, 10).unwrap(), vec![80.0]);
        assert!(matches!(
            build_ytd_svi_block(&p, 0, 2011, 12),
            Err(Error::OutOfRange(_))
        ));
    }

    #[test]
    fn month_country_block() {
        let b = build_month_country_block(0, 0, 8).unwrap();
        assert_eq!(b[0], 1.0);
        assert_eq!(b[..12].iter().sum::<f64>(), 1.0);
        let b = build_month_country_block(3, 11, 8).unwrap();
        assert_eq!(b[11], 1.0);
        assert_eq!(b[12], 3.0);
        assert!(build_month_country_block(8, 0, 8).is_err());
        assert!(build_month_country_block(0, 12, 8).is_err());
    }

    #[test]
    fn widths_match_column_counts() {
        assert_eq!(ConfigId::LagRD.width(3, 57), 19);
        assert_eq!(ConfigId::AllVar.width(3, 57), 265);
        let p = simple_panel();
        for config in ConfigId::ALL {
            let m = assemble(&p, config, 3).unwrap();
            assert_eq!(m.n_cols(), config.width(3, 2), "{config}");
            assert_eq!(m.x.ncols(), m.n_cols());
        }
    }

    #[test]
    fn column_symbols_match_config_exactly() {
        let p = simple_panel();
        for config in ConfigId::ALL {
            let m = assemble(&p, config, 2).unwrap();
            let permitted = config.permitted_symbols();
            assert!(m.columns.iter().all(|c| permitted.contains(&c.symbol)), "{config}");
            for s in &permitted {
                assert!(m.columns.iter().any(|c| c.symbol == *s), "{config} lacks {s:?}");
            }
            for c in &m.columns {
                if let Some(l) = c.lag_years {
                    assert!((1..=2).contains(&l));
                }
            }
        }
        let agt = assemble(&p, ConfigId::AGT, 3).unwrap();
        assert!(!agt
            .columns
            .iter()
            .any(|c| matches!(c.symbol, FeatureSymbol::ArTarget | FeatureSymbol::SviYtd)));
    }

    #[test]
    fn rows_skip_interpolated_targets() {
        let p = panel_with(1, |_, _, _| 10.0, &[(1, 2014)]);
        let all = assemble_all(&p, ConfigId::LagRD, 3).unwrap();
        assert_eq!(all.n_rows(), 2 * 3 * 12);
        let train = assemble(&p, ConfigId::LagRD, 3).unwrap();
        assert_eq!(train.n_rows(), 2 * 3 * 12 - 12);
        assert!(train.y.iter().all(Option::is_some));
        assert!(!train.rows.iter().any(|k| k.country == 1 && k.year == 2014));
    }

    #[test]
    fn ytd_zero_in_january_everywhere() {
        let p = panel_with(3, |c, k, m| ((c + 1) * (k + 2) * (m + 1) % 97) as f64, &[]);
        let m = assemble(&p, ConfigId::MGT, 3).unwrap();
        let ytd: Vec<usize> = (0..m.n_cols())
            .filter(|&i| m.columns[i].symbol == FeatureSymbol::SviYtd)
            .collect();
        for (r, key) in m.rows.iter().enumerate() {
            if key.month_j == 11 {
                assert!(ytd.iter().all(|&i| m.x[(r, i)] == 0.0));
            }
        }
    }

    #[test]
    fn annual_block_ignores_within_year_order_but_ytd_does_not() {
        let base = |m: usize| ((m * 37) % 23) as f64;
        // reverse the months inside every year
        let reversed = |m: usize| base(m / 12 * 12 + 11 - m % 12);
        let a = panel_with(1, |_, _, m| base(m), &[]);
        let b = panel_with(1, |_, _, m| reversed(m), &[]);
        for year in 2013..=2015 {
            let ba = build_annual_svi_block(&a, 0, year, 3).unwrap();
            let bb = build_annual_svi_block(&b, 0, year, 3).unwrap();
            for (x, y) in ba.iter().zip(&bb) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let differs = (0..11)
            .any(|j| build_ytd_svi_block(&a, 0, 2014, j).unwrap() != build_ytd_svi_block(&b, 0, 2014, j).unwrap());
        assert!(differs);
    }

    #[test]
    fn svi_sum_block_partial_year() {
        let p = simple_panel();
        let full = build_svi_sum_block(&p, 0, 2013, 1, 12).unwrap();
        assert_eq!(full, vec![78.0, 78.0, 78.0, 78.0]);
        let partial = build_svi_sum_block(&p, 0, 2013, 1, 3).unwrap();
        assert_eq!(partial, vec![6.0, 6.0, 78.0, 78.0]);
        let m = assemble_svi_sum(&p, 1).unwrap();
        assert_eq!(m.n_cols(), 2 * 2 + 13);
    }

    #[test]
    fn config_names_round_trip() {
        for c in ConfigId::ALL {
            assert_eq!(c.name().parse::<ConfigId>().unwrap(), c);
        }
        assert!("Foo".parse::<ConfigId>().is_err());
    }

    #[test]
    fn csv_export_has_labelled_header() {
        let p = simple_panel();
        let m = assemble(&p, ConfigId::AGT, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        m.write_csv(&path, Some("meta")).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# meta"));
        let header = lines.next().unwrap();
        assert!(header.starts_with("country,year,month_j,target,SVI_annual_lag[t0;lag=1]"));
        assert!(header.ends_with("month_onehot[j=11],country_id"));
        assert_eq!(lines.count(), m.n_rows());
    }
}
