//! Month contributions from forward passes on partial-year inputs.
//!
//! The model takes yearly SVI sums, lag 0 being the current year. Feeding the
//! sum over January..m (with the month dummy of m) and differencing
//! consecutive predictions attributes the change to month m. January is
//! measured against the input with no current-year months.

use nalgebra::DMatrix;

use super::{DisaggMethod, MonthlySeries};
use crate::dataio::Panel;
use crate::error::{Error, Result};
use crate::features::corrupted_input_row;
use crate::model::Predictor;

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedInputResult {
    /// January first.
    pub contributions: [f64; 12],
    /// Prediction on the full-year input.
    pub full: f64,
    /// Prediction with no current-year months.
    pub empty: f64,
}

pub fn corrupted_input_contributions(
    model: &dyn Predictor,
    panel: &Panel,
    tau: usize,
    country: usize,
    year: i32,
) -> Result<CorruptedInputResult> {
    // input m has the first m months; month_j = 12 − m, and the empty input
    // shares January's dummy
    let rows = (0..=12)
        .map(|m: usize| corrupted_input_row(panel, tau, country, year, m, if m == 0 { 11 } else { 12 - m }))
        .collect::<Result<Vec<_>>>()?;
    let width = rows[0].len();
    if width != model.input_width() {
        return Err(Error::WidthMismatch {
            expected: model.input_width(),
            actual: width,
        });
    }
    let x = DMatrix::from_fn(13, width, |r, c| rows[r][c]);
    let f = model.predict_rows(&x)?;
    let mut contributions = [0.0; 12];
    for m in 0..12 {
        contributions[m] = f[m + 1] - f[m];
    }
    Ok(CorruptedInputResult {
        contributions,
        full: f[12],
        empty: f[0],
    })
}

/// Contributions for every year with `tau` years of history. With
/// `anchors` (one per panel year) each year is rescaled to its anchor;
/// otherwise the raw contributions are kept and the anchors are the
/// observed targets.
pub fn corrupted_input_disagg(
    model: &dyn Predictor,
    panel: &Panel,
    tau: usize,
    country: usize,
    anchors: Option<&[f64]>,
) -> Result<MonthlySeries> {
    if let Some(a) = anchors {
        if a.len() != panel.n_years() {
            return Err(Error::WidthMismatch {
                expected: panel.n_years(),
                actual: a.len(),
            });
        }
    }
    let name = panel
        .countries()
        .get(country)
        .ok_or(Error::UnknownCountry(country))?
        .clone();
    let first = panel.start_year() + tau as i32;
    if first > panel.end_year() {
        return Err(Error::InsufficientHistory {
            year: panel.end_year(),
            tau,
            start: panel.start_year(),
        });
    }
    let mut values = Vec::new();
    let mut out_anchors = Vec::new();
    for year in first..=panel.end_year() {
        let idx = (year - panel.start_year()) as usize;
        let res = corrupted_input_contributions(model, panel, tau, country, year)?;
        match anchors {
            Some(a) => {
                let total: f64 = res.contributions.iter().sum();
                if total == 0.0 {
                    return Err(Error::ZeroDenominator(format!(
                        "contributions of {name} in {year} sum to zero"
                    )));
                }
                values.extend(res.contributions.iter().map(|c| c * a[idx] / total));
                out_anchors.push(a[idx]);
            }
            None => {
                values.extend(res.contributions);
                out_anchors.push(panel.targets(country)[idx].value);
            }
        }
    }
    Ok(MonthlySeries {
        country: name,
        method: DisaggMethod::CorruptedInput,
        start_year: first,
        values,
        anchors: out_anchors,
        normalized: anchors.is_some(),
    })
}
