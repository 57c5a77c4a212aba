//! Allocation of annual figures by elasticity-weighted SVI proportions.

use nalgebra::DMatrix;

use super::{DisaggMethod, MonthlySeries};
use crate::dataio::Panel;
use crate::error::{Error, Result};
use crate::explain::ElasticityTable;
use crate::features::{build_row, RowKey};
use crate::neuralnet::MlpEnsemble;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AllocationReport {
    /// `(year, topic)` pairs whose SVI was zero all year.
    pub skipped: Vec<(i32, String)>,
    /// Years whose anchor came from the network rather than an observation.
    pub nowcast_years: Vec<i32>,
}

/// Annual anchors for every panel year of `country`: observed targets, and
/// for interpolated years the ensemble nowcast when an ensemble is given
/// and the year has enough history, otherwise the interpolated value.
pub fn annual_anchors(panel: &Panel, country: usize, ensemble: Option<&MlpEnsemble>) -> Result<(Vec<f64>, Vec<i32>)> {
    let mut anchors = Vec::with_capacity(panel.n_years());
    let mut nowcast_years = Vec::new();
    for t in panel.targets(country) {
        let value = match ensemble {
            Some(e) if t.is_interpolated && t.year - panel.start_year() >= e.tau as i32 => {
                nowcast_years.push(t.year);
                nowcast_year(e, panel, country, t.year)?
            }
            _ => t.value,
        };
        anchors.push(value);
    }
    Ok((anchors, nowcast_years))
}

/// Mean of the ensemble's twelve monthly-row predictions for one year.
pub fn nowcast_year(ensemble: &MlpEnsemble, panel: &Panel, country: usize, year: i32) -> Result<f64> {
    let rows = (0..12)
        .map(|month_j| build_row(panel, ensemble.config, ensemble.tau, RowKey { country, year, month_j }))
        .collect::<Result<Vec<_>>>()?;
    let x = DMatrix::from_fn(12, rows[0].len(), |r, c| rows[r][c]);
    let pred = ensemble.predict_raw(&x)?;
    Ok(pred.iter().sum::<f64>() / 12.0)
}

/// Spreads `anchors` (one per panel year) over months in proportion to
/// `Σ_k η̄_k · s_k(month) / Σ_month s_k`.
pub fn nn_elasticity_disagg(
    panel: &Panel,
    country: usize,
    anchors: &[f64],
    table: &ElasticityTable,
) -> Result<(MonthlySeries, AllocationReport)> {
    if anchors.len() != panel.n_years() {
        return Err(Error::WidthMismatch {
            expected: panel.n_years(),
            actual: anchors.len(),
        });
    }
    let name = panel
        .countries()
        .get(country)
        .ok_or(Error::UnknownCountry(country))?
        .clone();
    let eta: Vec<f64> = panel
        .topics()
        .iter()
        .map(|t| {
            table
                .get(&name, t)
                .map(|e| e.eta)
                .ok_or_else(|| Error::MissingData(format!("no elasticity for {name}/{t}")))
        })
        .collect::<Result<_>>()?;

    let mut report = AllocationReport::default();
    let mut values = Vec::with_capacity(12 * panel.n_years());
    for (i, year) in panel.years().enumerate() {
        let mut weight = [0.0_f64; 12];
        for (k, topic) in panel.topics().iter().enumerate() {
            let s = panel
                .svi(country, k)
                .year(year)
                .ok_or_else(|| Error::MissingData(format!("no SVI for {name}/{topic} in {year}")))?;
            let total: f64 = s.iter().sum();
            if total == 0.0 {
                report.skipped.push((year, topic.clone()));
                continue;
            }
            for m in 0..12 {
                weight[m] += eta[k] * s[m] / total;
            }
        }
        let denom: f64 = weight.iter().sum();
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::ZeroDenominator(format!(
                "elasticity-weighted proportions of {name} cancel in {year}"
            )));
        }
        values.extend(weight.iter().map(|w| anchors[i] * w / denom));
    }
    Ok((
        MonthlySeries {
            country: name,
            method: DisaggMethod::NnElasticity,
            start_year: panel.start_year(),
            values,
            anchors: anchors.to_vec(),
            normalized: true,
        },
        report,
    ))
}
