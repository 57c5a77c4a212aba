//! Raw data ingestion: annual targets, monthly search-volume samples and
//! annual macro variables, aligned into an immutable [`Panel`].

mod csvio;
mod interp;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csvio::{load_panel, write_panel, PanelPaths};
pub use interp::interpolate_gaps;
pub use synthetic::{generate_synthetic_panel, Dgp, DgpKind, GroundTruth, SyntheticSpec};

/// Annual target observation for one country.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnualTarget {
    pub country: String,
    pub year: i32,
    pub value: f64,
    /// Set when the raw source had a gap here and `value` was interpolated.
    pub is_interpolated: bool,
}

/// Monthly search-volume index of one topic in one country.
///
/// Months run from January of `start_year`; `samples` holds every retrieval
/// sample and `averaged` their per-month arithmetic mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SviSeries {
    pub country: String,
    pub topic: String,
    pub start_year: i32,
    pub samples: Vec<Vec<f64>>,
    pub averaged: Vec<f64>,
}

impl SviSeries {
    /// Validates the samples and computes the averaged series.
    pub fn from_samples(
        country: impl Into<String>,
        topic: impl Into<String>,
        start_year: i32,
        samples: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let country = country.into();
        let topic = topic.into();
        let first = samples
            .first()
            .ok_or_else(|| Error::MissingData(format!("no samples for {country}/{topic}")))?;
        let len = first.len();
        if len == 0 || len % 12 != 0 {
            return Err(Error::InvalidInput(format!(
                "{country}/{topic}: {len} months is not a whole number of years"
            )));
        }
        if samples.iter().any(|s| s.len() != len) {
            return Err(Error::InvalidInput(format!(
                "{country}/{topic}: samples cover different month ranges"
            )));
        }
        for s in &samples {
            if let Some(v) = s.iter().find(|v| !(0.0..=100.0).contains(*v)) {
                return Err(Error::InvalidInput(format!(
                    "{country}/{topic}: search volume value {v} outside [0, 100]"
                )));
            }
        }
        let averaged = average_samples(&samples);
        Ok(Self {
            country,
            topic,
            start_year,
            samples,
            averaged,
        })
    }

    pub fn n_years(&self) -> usize {
        self.averaged.len() / 12
    }

    /// Averaged values of `year`, January first. `None` outside coverage.
    pub fn year(&self, year: i32) -> Option<&[f64]> {
        let offset = year - self.start_year;
        if offset < 0 || offset as usize >= self.n_years() {
            return None;
        }
        let start = offset as usize * 12;
        Some(&self.averaged[start..start + 12])
    }
}

/// Per-month mean over samples. Values are summed in sorted order so the
/// result does not depend on how the samples are ordered.
fn average_samples(samples: &[Vec<f64>]) -> Vec<f64> {
    let n = samples.len() as f64;
    let len = samples[0].len();
    let mut column = Vec::with_capacity(samples.len());
    (0..len)
        .map(|m| {
            column.clear();
            column.extend(samples.iter().map(|s| s[m]));
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / n
        })
        .collect()
}

/// The six annual macro variables, in file-column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroVar {
    GdpPc,
    Unemployment,
    Population,
    Inflation,
    Exports,
    Imports,
}

impl MacroVar {
    pub const ALL: [MacroVar; 6] = [
        MacroVar::GdpPc,
        MacroVar::Unemployment,
        MacroVar::Population,
        MacroVar::Inflation,
        MacroVar::Exports,
        MacroVar::Imports,
    ];

    pub fn column(self) -> &'static str {
        match self {
            MacroVar::GdpPc => "gdp_pc",
            MacroVar::Unemployment => "unemployment",
            MacroVar::Population => "population",
            MacroVar::Inflation => "inflation",
            MacroVar::Exports => "exports",
            MacroVar::Imports => "imports",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroSeries {
    pub country: String,
    pub variable: MacroVar,
    pub values: BTreeMap<i32, f64>,
    /// Years filled with the per-country mean of the observed years.
    pub imputed_years: BTreeSet<i32>,
}

impl MacroSeries {
    /// Builds a complete series over `years`, imputing gaps with the mean of
    /// the observed values.
    pub fn impute(
        country: impl Into<String>,
        variable: MacroVar,
        observed: &BTreeMap<i32, Option<f64>>,
        years: std::ops::RangeInclusive<i32>,
    ) -> Result<Self> {
        let country = country.into();
        let obs: Vec<f64> = observed.values().flatten().copied().collect();
        if obs.is_empty() {
            return Err(Error::MissingData(format!(
                "{country}: no observed values for macro variable {}",
                variable.column()
            )));
        }
        let mean = obs.iter().sum::<f64>() / obs.len() as f64;
        let mut values = BTreeMap::new();
        let mut imputed_years = BTreeSet::new();
        for year in years {
            match observed.get(&year).copied().flatten() {
                Some(v) => {
                    values.insert(year, v);
                }
                None => {
                    values.insert(year, mean);
                    imputed_years.insert(year);
                }
            }
        }
        Ok(Self {
            country,
            variable,
            values,
            imputed_years,
        })
    }
}

/// Aligned multi-country panel. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    countries: Vec<String>,
    topics: Vec<String>,
    start_year: i32,
    end_year: i32,
    /// `[country][year - start_year]`
    targets: Vec<Vec<AnnualTarget>>,
    /// `[country][topic]`
    svi: Vec<Vec<SviSeries>>,
    /// `[country][MacroVar::index()]`
    macros: Vec<Vec<MacroSeries>>,
}

impl Panel {
    pub fn new(
        countries: Vec<String>,
        topics: Vec<String>,
        start_year: i32,
        end_year: i32,
        targets: Vec<Vec<AnnualTarget>>,
        svi: Vec<Vec<SviSeries>>,
        macros: Vec<Vec<MacroSeries>>,
    ) -> Result<Self> {
        if countries.is_empty() {
            return Err(Error::InvalidInput("panel has no countries".into()));
        }
        if topics.is_empty() {
            return Err(Error::InvalidInput("panel has no search topics".into()));
        }
        if end_year < start_year {
            return Err(Error::InvalidInput(format!(
                "empty year range {start_year}..={end_year}"
            )));
        }
        let n_years = (end_year - start_year + 1) as usize;
        let nc = countries.len();
        if targets.len() != nc || svi.len() != nc || macros.len() != nc {
            return Err(Error::InvalidInput(
                "per-country collections do not match the country list".into(),
            ));
        }
        for (c, name) in countries.iter().enumerate() {
            let t = &targets[c];
            if t.len() != n_years
                || t.iter()
                    .enumerate()
                    .any(|(i, a)| a.year != start_year + i as i32 || &a.country != name)
            {
                return Err(Error::InvalidInput(format!(
                    "{name}: targets do not cover {start_year}..={end_year}"
                )));
            }
            if let Some(a) = t.iter().find(|a| !(a.value > 0.0) || !a.value.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name}: non-positive target {} in {}",
                    a.value, a.year
                )));
            }
            if svi[c].len() != topics.len() {
                return Err(Error::InvalidInput(format!("{name}: expected {} topics", topics.len())));
            }
            for (k, s) in svi[c].iter().enumerate() {
                if s.start_year != start_year || s.n_years() != n_years {
                    return Err(Error::InvalidInput(format!(
                        "{name}/{}: monthly coverage must span January {start_year} to December {end_year}",
                        topics[k]
                    )));
                }
            }
            let m = &macros[c];
            if m.len() != MacroVar::ALL.len()
                || m.iter()
                    .zip(MacroVar::ALL)
                    .any(|(s, v)| s.variable != v || (start_year..=end_year).any(|y| !s.values.contains_key(&y)))
            {
                return Err(Error::InvalidInput(format!("{name}: macro variables incomplete")));
            }
        }
        Ok(Self {
            countries,
            topics,
            start_year,
            end_year,
            targets,
            svi,
            macros,
        })
    }

    pub fn countries(&self) -> &[String] {
        &self.countries
    }

    pub fn topics(&self) -> &[String] {
        &self.topics
    }

    pub fn n_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn n_topics(&self) -> usize {
        self.topics.len()
    }

    pub fn start_year(&self) -> i32 {
        self.start_year
    }

    pub fn end_year(&self) -> i32 {
        self.end_year
    }

    pub fn n_years(&self) -> usize {
        (self.end_year - self.start_year + 1) as usize
    }

    pub fn years(&self) -> std::ops::RangeInclusive<i32> {
        self.start_year..=self.end_year
    }

    pub fn country_index(&self, country: &str) -> Option<usize> {
        self.countries.iter().position(|c| c == country)
    }

    pub fn topic_index(&self, topic: &str) -> Option<usize> {
        self.topics.iter().position(|t| t == topic)
    }

    pub fn targets(&self, country: usize) -> &[AnnualTarget] {
        &self.targets[country]
    }

    pub fn target(&self, country: usize, year: i32) -> Option<&AnnualTarget> {
        let offset = year.checked_sub(self.start_year)?;
        if offset < 0 {
            return None;
        }
        self.targets.get(country)?.get(offset as usize)
    }

    pub fn svi(&self, country: usize, topic: usize) -> &SviSeries {
        &self.svi[country][topic]
    }

    pub fn macro_series(&self, country: usize, var: MacroVar) -> &MacroSeries {
        &self.macros[country][var.index()]
    }

    pub fn macro_value(&self, country: usize, var: MacroVar, year: i32) -> Option<f64> {
        self.macros.get(country)?.get(var.index())?.values.get(&year).copied()
    }

    /// Averaged monthly values of one topic over the whole panel, January first.
    pub fn monthly_svi(&self, country: usize, topic: usize) -> &[f64] {
        &self.svi[country][topic].averaged
    }
}

/// Maps the month index used by the feature blocks (`j = 0` is December,
/// `j = 11` is January) to a calendar month in `1..=12`.
pub fn calendar_month(month_j: usize) -> u32 {
    debug_assert!(month_j < 12);
    12 - month_j as u32
}

#[cfg(test)]
pub(crate) mod test_support {
    use std::collections::BTreeMap;

    use super::*;

    /// One country `AA` from 2000 with `k_s` topics `t0..`; `svi(k, m)` gives
    /// the monthly value at month index `m`.
    pub fn panel_from_svi(k_s: usize, n_years: usize, svi: impl Fn(usize, usize) -> f64) -> Panel {
        let (start, end) = (2000, 2000 + n_years as i32 - 1);
        let name = "AA".to_owned();
        let topics: Vec<String> = (0..k_s).map(|k| format!("t{k}")).collect();
        let targets = (start..=end)
            .map(|year| AnnualTarget {
                country: name.clone(),
                year,
                value: 50.0 + f64::from(year - start),
                is_interpolated: false,
            })
            .collect();
        let series = topics
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let months = (0..12 * n_years).map(|m| svi(k, m)).collect();
                SviSeries::from_samples(name.clone(), t.clone(), start, vec![months]).unwrap()
            })
            .collect();
        let macros = MacroVar::ALL
            .iter()
            .map(|&v| {
                let obs: BTreeMap<i32, Option<f64>> = (start..=end).map(|y| (y, Some(f64::from(y - start)))).collect();
                MacroSeries::impute(name.clone(), v, &obs, start..=end).unwrap()
            })
            .collect();
        Panel::new(
            vec![name],
            topics,
            start,
            end,
            vec![targets],
            vec![series],
            vec![macros],
        )
        .unwrap()
    }
}
