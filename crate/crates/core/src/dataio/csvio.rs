use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::{interpolate_gaps, AnnualTarget, MacroSeries, MacroVar, Panel, SviSeries};
use crate::error::{Error, Result};

const GERD_COLUMNS: [&str; 3] = ["country", "year", "gerd_usd_bn"];

/// Locations of the three raw sources.
#[derive(Debug, Clone)]
pub struct PanelPaths {
    pub gerd: PathBuf,
    pub svi_dir: PathBuf,
    pub macros: PathBuf,
}

/// Name of the SVI file for one country/topic pair.
pub(crate) fn svi_file_name(country: &str, topic: &str) -> String {
    format!("{country}__{topic}.csv")
}

struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let headers = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let line = record.position().map_or(0, |p| p.line());
            rows.push((line, record.iter().map(str::to_owned).collect()));
        }
        Ok(Self {
            path: path.to_owned(),
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema {
                path: self.path.clone(),
                message: format!("missing column `{name}`"),
            })
    }

    fn number(&self, line: u64, column: &str, cell: &str) -> Result<f64> {
        cell.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::NonNumeric {
                path: self.path.clone(),
                line,
                column: column.to_owned(),
                value: cell.to_owned(),
            })
    }

    fn optional(&self, line: u64, column: &str, cell: &str) -> Result<Option<f64>> {
        if cell.is_empty() {
            Ok(None)
        } else {
            self.number(line, column, cell).map(Some)
        }
    }

    fn integer(&self, line: u64, column: &str, cell: &str) -> Result<i32> {
        cell.parse::<i32>().map_err(|_| Error::NonNumeric {
            path: self.path.clone(),
            line,
            column: column.to_owned(),
            value: cell.to_owned(),
        })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Csv {
            path: path.to_owned(),
            message: format!("{other:?}"),
        },
    }
}

/// Loads and aligns the three sources.
///
/// The year range is taken from the GERD file. Interior target gaps are
/// linearly interpolated and flagged; macro gaps are filled with the
/// per-country mean; SVI samples are averaged per month.
pub fn load_panel(gerd_path: &Path, svi_dir: &Path, macro_path: &Path) -> Result<Panel> {
    let (countries, start_year, end_year, targets) = read_gerd(gerd_path)?;
    let macros = read_macros(macro_path, &countries, start_year, end_year)?;
    let (topics, svi) = read_svi_dir(svi_dir, &countries, start_year, end_year)?;
    Panel::new(countries, topics, start_year, end_year, targets, svi, macros)
}

type GerdTable = (Vec<String>, i32, i32, Vec<Vec<AnnualTarget>>);

fn read_gerd(path: &Path) -> Result<GerdTable> {
    let table = Table::read(path)?;
    let [ci, yi, vi] = GERD_COLUMNS.map(|c| table.column(c));
    let (ci, yi, vi) = (ci?, yi?, vi?);

    let mut raw: BTreeMap<String, BTreeMap<i32, Option<f64>>> = BTreeMap::new();
    let mut order = Vec::new();
    for (line, row) in &table.rows {
        let country = row[ci].clone();
        let year = table.integer(*line, "year", &row[yi])?;
        let value = table.optional(*line, "gerd_usd_bn", &row[vi])?;
        if let Some(v) = value {
            if v <= 0.0 {
                return Err(Error::Schema {
                    path: path.to_owned(),
                    message: format!("line {line}: target must be positive, got {v}"),
                });
            }
        }
        if !raw.contains_key(&country) {
            order.push(country.clone());
        }
        if raw.entry(country.clone()).or_default().insert(year, value).is_some() {
            return Err(Error::Schema {
                path: path.to_owned(),
                message: format!("line {line}: duplicate row for {country} {year}"),
            });
        }
    }
    let years: Vec<i32> = raw.values().flat_map(|m| m.keys().copied()).collect();
    let (Some(&start), Some(&end)) = (years.iter().min(), years.iter().max()) else {
        return Err(Error::Schema {
            path: path.to_owned(),
            message: "no rows".into(),
        });
    };

    let mut targets = Vec::with_capacity(order.len());
    for country in &order {
        let mut series = raw.remove(country).unwrap_or_default();
        for y in start..=end {
            series.entry(y).or_insert(None);
        }
        let filled = interpolate_gaps(&series).map_err(|e| Error::Schema {
            path: path.to_owned(),
            message: format!("{country}: {e}"),
        })?;
        targets.push(
            filled
                .into_iter()
                .map(|(year, (value, is_interpolated))| AnnualTarget {
                    country: country.clone(),
                    year,
                    value,
                    is_interpolated,
                })
                .collect(),
        );
    }
    Ok((order, start, end, targets))
}

fn read_macros(path: &Path, countries: &[String], start: i32, end: i32) -> Result<Vec<Vec<MacroSeries>>> {
    let table = Table::read(path)?;
    let ci = table.column("country")?;
    let yi = table.column("year")?;
    let var_cols = MacroVar::ALL.map(|v| table.column(v.column()));
    let mut var_idx = [0usize; 6];
    for (slot, col) in var_idx.iter_mut().zip(var_cols) {
        *slot = col?;
    }

    // country -> var -> year -> value
    let mut raw: BTreeMap<&str, Vec<BTreeMap<i32, Option<f64>>>> = BTreeMap::new();
    for (line, row) in &table.rows {
        let Some(country) = countries.iter().find(|c| **c == row[ci]) else {
            continue;
        };
        let year = table.integer(*line, "year", &row[yi])?;
        let entry = raw
            .entry(country.as_str())
            .or_insert_with(|| vec![BTreeMap::new(); MacroVar::ALL.len()]);
        for (v, &col) in MacroVar::ALL.iter().zip(&var_idx) {
            let value = table.optional(*line, v.column(), &row[col])?;
            entry[v.index()].insert(year, value);
        }
    }

    countries
        .iter()
        .map(|country| {
            let per_var = raw
                .get(country.as_str())
                .ok_or_else(|| Error::MissingData(format!("{}: no macro rows for {country}", path.display())))?;
            MacroVar::ALL
                .iter()
                .map(|&v| MacroSeries::impute(country.clone(), v, &per_var[v.index()], start..=end))
                .collect()
        })
        .collect()
}

fn read_svi_dir(dir: &Path, countries: &[String], start: i32, end: i32) -> Result<(Vec<String>, Vec<Vec<SviSeries>>)> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut topics = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(".csv")) else {
            continue;
        };
        if let Some((country, topic)) = stem.split_once("__") {
            if countries.iter().any(|c| c == country) {
                topics.insert(topic.to_owned());
            }
        }
    }
    if topics.is_empty() {
        return Err(Error::MissingData(format!(
            "no SVI files named <country>__<topic>.csv in {}",
            dir.display()
        )));
    }
    let topics: Vec<String> = topics.into_iter().collect();
    let n_months = ((end - start + 1) * 12) as usize;

    let mut svi = Vec::with_capacity(countries.len());
    for country in countries {
        let mut per_topic = Vec::with_capacity(topics.len());
        for topic in &topics {
            let path = dir.join(svi_file_name(country, topic));
            if !path.exists() {
                return Err(Error::MissingData(format!("missing SVI file {}", path.display())));
            }
            let samples = read_svi_file(&path, start, n_months)?;
            per_topic.push(SviSeries::from_samples(country.clone(), topic.clone(), start, samples)?);
        }
        svi.push(per_topic);
    }
    Ok((topics, svi))
}

/// Reads one SVI file; returns one monthly vector per sample column,
/// truncated to `n_months` from January of `start`.
fn read_svi_file(path: &Path, start: i32, n_months: usize) -> Result<Vec<Vec<f64>>> {
    let table = Table::read(path)?;
    let yi = table.column("year")?;
    let mi = table.column("month")?;
    let sample_cols: Vec<(usize, String)> = table
        .headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("sample_"))
        .map(|(i, h)| (i, h.clone()))
        .collect();
    if sample_cols.is_empty() {
        return Err(Error::Schema {
            path: path.to_owned(),
            message: "missing column `sample_1`".into(),
        });
    }
    let mut samples = vec![Vec::with_capacity(n_months); sample_cols.len()];
    let mut expected = (start, 1);
    for (line, row) in &table.rows {
        let year = table.integer(*line, "year", &row[yi])?;
        let month = table.integer(*line, "month", &row[mi])?;
        if !(1..=12).contains(&month) {
            return Err(Error::NonContiguousMonths {
                path: path.to_owned(),
                message: format!("line {line}: month {month} outside 1..=12"),
            });
        }
        if (year, month) != expected {
            return Err(Error::NonContiguousMonths {
                path: path.to_owned(),
                message: format!(
                    "line {line}: expected {}-{:02}, found {year}-{month:02}",
                    expected.0, expected.1
                ),
            });
        }
        expected = if month == 12 { (year + 1, 1) } else { (year, month + 1) };
        if samples[0].len() == n_months {
            continue;
        }
        for (s, (col, name)) in samples.iter_mut().zip(&sample_cols) {
            let v = table.number(*line, name, &row[*col])?;
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::SviOutOfRange {
                    path: path.to_owned(),
                    line: *line,
                    value: v,
                });
            }
            s.push(v);
        }
    }
    if samples[0].len() < n_months {
        return Err(Error::NonContiguousMonths {
            path: path.to_owned(),
            message: format!(
                "covers {} months, panel needs {n_months} from January {start}",
                samples[0].len()
            ),
        });
    }
    Ok(samples)
}

/// Writes a panel back to the three CSV schemas. Interpolated targets and
/// imputed macro values are written as empty cells so that reloading
/// reproduces the panel exactly.
pub fn write_panel(panel: &Panel, paths: &PanelPaths) -> Result<()> {
    let mut w = writer(&paths.gerd)?;
    write_row(&mut w, &paths.gerd, GERD_COLUMNS)?;
    for c in 0..panel.n_countries() {
        for t in panel.targets(c) {
            let value = if t.is_interpolated {
                String::new()
            } else {
                t.value.to_string()
            };
            write_row(&mut w, &paths.gerd, [t.country.clone(), t.year.to_string(), value])?;
        }
    }
    flush(w, &paths.gerd)?;

    let mut w = writer(&paths.macros)?;
    let header: Vec<String> = ["country", "year"]
        .into_iter()
        .chain(MacroVar::ALL.iter().map(|v| v.column()))
        .map(str::to_owned)
        .collect();
    write_row(&mut w, &paths.macros, header)?;
    for (c, country) in panel.countries().iter().enumerate() {
        for year in panel.years() {
            let mut row = vec![country.clone(), year.to_string()];
            for v in MacroVar::ALL {
                let s = panel.macro_series(c, v);
                row.push(if s.imputed_years.contains(&year) {
                    String::new()
                } else {
                    s.values[&year].to_string()
                });
            }
            write_row(&mut w, &paths.macros, row)?;
        }
    }
    flush(w, &paths.macros)?;

    fs::create_dir_all(&paths.svi_dir).map_err(|e| Error::io(&paths.svi_dir, e))?;
    for (c, country) in panel.countries().iter().enumerate() {
        for (k, topic) in panel.topics().iter().enumerate() {
            let path = paths.svi_dir.join(svi_file_name(country, topic));
            let s = panel.svi(c, k);
            let mut w = writer(&path)?;
            let mut header = vec!["year".to_owned(), "month".to_owned()];
            header.extend((1..=s.samples.len()).map(|i| format!("sample_{i}")));
            write_row(&mut w, &path, header)?;
            for m in 0..s.averaged.len() {
                let mut row = vec![(s.start_year + (m / 12) as i32).to_string(), (m % 12 + 1).to_string()];
                row.extend(s.samples.iter().map(|x| x[m].to_string()));
                write_row(&mut w, &path, row)?;
            }
            flush(w, &path)?;
        }
    }
    Ok(())
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn write_row<I, T>(w: &mut csv::Writer<fs::File>, path: &Path, row: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| csv_error(path, e))
}

fn flush(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}
