use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Fills interior gaps of an annual series by linear interpolation between
/// the nearest observed neighbours.
///
/// Every year between the first and last key is expected to be present in
/// the map (`None` marks a gap). Returned entries carry `true` when filled.
/// Gaps before the first or after the last observation are rejected.
pub fn interpolate_gaps(series: &BTreeMap<i32, Option<f64>>) -> Result<BTreeMap<i32, (f64, bool)>> {
    let observed: Vec<(i32, f64)> = series.iter().filter_map(|(&y, v)| v.map(|v| (y, v))).collect();
    if observed.len() < 2 {
        return Err(Error::TooFewObservations);
    }
    let (first, _) = observed[0];
    let (last, _) = observed[observed.len() - 1];
    if let Some((&year, _)) = series.iter().find(|(&y, v)| v.is_none() && (y < first || y > last)) {
        return Err(Error::EdgeGap { year });
    }

    let mut out = BTreeMap::new();
    for pair in observed.windows(2) {
        let (y0, v0) = pair[0];
        let (y1, v1) = pair[1];
        out.insert(y0, (v0, false));
        let span = f64::from(y1 - y0);
        for y in (y0 + 1)..y1 {
            let w = f64::from(y - y0) / span;
            out.insert(y, (v0 + w * (v1 - v0), true));
        }
    }
    out.insert(last, (observed[observed.len() - 1].1, false));
    Ok(out)
}
