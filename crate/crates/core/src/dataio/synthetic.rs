//! Synthetic panels with a known monthly data-generating process.
//!
//! Annual targets are exact sums of a latent monthly series, so the
//! disaggregation methods and the nowcasting models can be checked against
//! ground truth.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AnnualTarget, MacroSeries, MacroVar, Panel, SviSeries};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    /// `m = intercept + Σ coef_k · s_k + u`
    Linear,
    /// `m = exp(intercept + Σ coef_k · ln s_k + u)`
    LogLinear,
    /// `m = level_c + w`, `w` a random walk driven by the AR(1) noise;
    /// independent of the search series.
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dgp {
    #[serde(rename = "type")]
    pub kind: DgpKind,
    /// One coefficient per topic; missing trailing entries are zero.
    #[serde(default)]
    pub coefficients: Vec<f64>,
    #[serde(default)]
    pub ar_rho: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub intercept: f64,
    /// Months by which the search series lead the target. The generator
    /// draws that many extra months before the panel starts.
    #[serde(default)]
    pub lag_months: usize,
}

fn default_samples() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub countries: usize,
    pub start_year: i32,
    pub end_year: i32,
    pub k_s: usize,
    pub dgp: Dgp,
    #[serde(default)]
    pub seed: u64,
    /// Retrieval samples per SVI series.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Standard deviation of per-sample retrieval noise around the true index.
    #[serde(default)]
    pub sample_noise: f64,
}

impl SyntheticSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        if self.countries == 0 {
            return Err(Error::InvalidSpec("zero countries".into()));
        }
        if self.end_year < self.start_year {
            return Err(Error::InvalidSpec(format!(
                "empty year range {}..={}",
                self.start_year, self.end_year
            )));
        }
        if self.k_s == 0 {
            return Err(Error::InvalidSpec("k_s must be at least 1".into()));
        }
        if self.samples == 0 {
            return Err(Error::InvalidSpec("at least one sample per series".into()));
        }
        if self.dgp.coefficients.len() > self.k_s {
            return Err(Error::InvalidSpec(format!(
                "{} coefficients for {} topics",
                self.dgp.coefficients.len(),
                self.k_s
            )));
        }
        if !(self.dgp.ar_rho.abs() < 1.0) {
            return Err(Error::InvalidSpec("ar_rho must lie in (-1, 1)".into()));
        }
        if !(self.dgp.noise_sigma >= 0.0) || !(self.sample_noise >= 0.0) {
            return Err(Error::InvalidSpec("noise scales must be non-negative".into()));
        }
        Ok(())
    }
}

/// Latent monthly truth behind a synthetic panel, `[country][month]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub monthly: Vec<Vec<f64>>,
    /// The AR(1) noise component of `monthly`.
    pub residuals: Vec<Vec<f64>>,
}

/// Generates a panel whose annual targets are the exact sums of the returned
/// latent monthly series. Deterministic for a given `(spec, seed)`.
pub fn generate_synthetic_panel(spec: &SyntheticSpec, seed: u64) -> Result<(Panel, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_years = (spec.end_year - spec.start_year + 1) as usize;
    let n_months = n_years * 12;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let countries: Vec<String> = (0..spec.countries).map(|c| format!("C{c:02}")).collect();
    let topics: Vec<String> = (0..spec.k_s).map(|k| format!("topic_{k:02}")).collect();

    let mut all_targets = Vec::with_capacity(spec.countries);
    let mut all_svi = Vec::with_capacity(spec.countries);
    let mut all_macros = Vec::with_capacity(spec.countries);
    let mut truth = GroundTruth {
        monthly: Vec::new(),
        residuals: Vec::new(),
    };

    for country in &countries {
        let mut svi = Vec::with_capacity(spec.k_s);
        let mut lead_in: Vec<Vec<f64>> = Vec::with_capacity(spec.k_s);
        for topic in &topics {
            let level = rng.random_range(20.0..60.0);
            let amplitude = rng.random_range(0.0..8.0);
            let phase = rng.random_range(0.0..12.0);
            let trend = rng.random_range(-0.02..0.02);
            let mut ar = 0.0;
            let lead = spec.dgp.lag_months;
            let truth_series: Vec<f64> = (0..n_months + lead)
                .map(|m| {
                    ar = 0.8 * ar + 3.0 * std_normal.sample(&mut rng);
                    // month index relative to the panel start; negative in the lead-in
                    let t = m as f64 - lead as f64;
                    let seasonal = amplitude * (2.0 * PI * (t + phase) / 12.0).sin();
                    (level + trend * t + seasonal + ar).clamp(1.0, 100.0)
                })
                .collect();
            let samples: Vec<Vec<f64>> = (0..spec.samples)
                .map(|_| {
                    truth_series
                        .iter()
                        .map(|&v| {
                            if spec.sample_noise > 0.0 {
                                (v + spec.sample_noise * std_normal.sample(&mut rng)).clamp(0.0, 100.0)
                            } else {
                                v
                            }
                        })
                        .collect()
                })
                .collect();
            let n_samples = samples.len() as f64;
            lead_in.push(
                (0..lead)
                    .map(|m| samples.iter().map(|s| s[m]).sum::<f64>() / n_samples)
                    .collect(),
            );
            let samples = samples.into_iter().map(|s| s[lead..].to_vec()).collect();
            svi.push(SviSeries::from_samples(
                country.clone(),
                topic.clone(),
                spec.start_year,
                samples,
            )?);
        }
        // averaged index of topic k at panel month m − lag_months
        let lead = spec.dgp.lag_months;
        let driver = |k: usize, m: usize| -> f64 {
            if m >= lead {
                svi[k].averaged[m - lead]
            } else {
                lead_in[k][m]
            }
        };

        let residuals = ar1_noise(&mut rng, n_months, spec.dgp.ar_rho, spec.dgp.noise_sigma);
        let coef = |k: usize| spec.dgp.coefficients.get(k).copied().unwrap_or(0.0);
        let monthly: Vec<f64> = match spec.dgp.kind {
            DgpKind::Linear => (0..n_months)
                .map(|m| spec.dgp.intercept + (0..spec.k_s).map(|k| coef(k) * driver(k, m)).sum::<f64>() + residuals[m])
                .collect(),
            DgpKind::LogLinear => (0..n_months)
                .map(|m| {
                    (spec.dgp.intercept
                        + (0..spec.k_s)
                            .map(|k| coef(k) * driver(k, m).max(1e-9).ln())
                            .sum::<f64>()
                        + residuals[m])
                        .exp()
                })
                .collect(),
            DgpKind::RandomWalk => {
                let level = spec.dgp.intercept * rng.random_range(0.5..2.0);
                let mut walk = 0.0;
                residuals
                    .iter()
                    .map(|u| {
                        walk += u;
                        level + walk
                    })
                    .collect()
            }
        };

        let targets: Vec<AnnualTarget> = (0..n_years)
            .map(|y| AnnualTarget {
                country: country.clone(),
                year: spec.start_year + y as i32,
                value: monthly[y * 12..(y + 1) * 12].iter().sum(),
                is_interpolated: false,
            })
            .collect();
        if let Some(bad) = targets.iter().find(|t| !(t.value > 0.0)) {
            return Err(Error::InvalidSpec(format!(
                "DGP produced a non-positive annual target {} for {country} in {}",
                bad.value, bad.year
            )));
        }

        let macros = MacroVar::ALL
            .iter()
            .map(|&v| {
                let base = rng.random_range(1.0..10.0);
                let mut x = base;
                let observed: BTreeMap<i32, Option<f64>> = (spec.start_year..=spec.end_year)
                    .map(|year| {
                        x += 0.1 * base * std_normal.sample(&mut rng);
                        (year, Some(x))
                    })
                    .collect();
                MacroSeries::impute(country.clone(), v, &observed, spec.start_year..=spec.end_year)
            })
            .collect::<Result<Vec<_>>>()?;

        all_targets.push(targets);
        all_svi.push(svi);
        all_macros.push(macros);
        truth.monthly.push(monthly);
        truth.residuals.push(residuals);
    }

    let panel = Panel::new(
        countries,
        topics,
        spec.start_year,
        spec.end_year,
        all_targets,
        all_svi,
        all_macros,
    )?;
    Ok((panel, truth))
}

/// Stationary AR(1) path `u_t = ρ u_{t-1} + σ ε_t`.
pub(crate) fn ar1_noise<R: Rng>(rng: &mut R, n: usize, rho: f64, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut u = sigma / (1.0 - rho * rho).sqrt() * normal.sample(rng);
    (0..n)
        .map(|t| {
            if t > 0 {
                u = rho * u + sigma * normal.sample(rng);
            }
            u
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_spec() -> SyntheticSpec {
        SyntheticSpec {
            countries: 2,
            start_year: 2005,
            end_year: 2012,
            k_s: 3,
            dgp: Dgp {
                kind: DgpKind::Linear,
                coefficients: vec![2.0],
                ar_rho: 0.0,
                noise_sigma: 0.0,
                intercept: 0.0,
                lag_months: 0,
            },
            seed: 1,
            samples: 5,
            sample_noise: 1.5,
        }
    }

    #[test]
    fn exact_linear_dgp() {
        let (panel, truth) = generate_synthetic_panel(&linear_spec(), 3).unwrap();
        for c in 0..panel.n_countries() {
            for year in panel.years() {
                let topic = panel.svi(c, 0).year(year).unwrap();
                let expected = 2.0 * topic.iter().sum::<f64>();
                let target = panel.target(c, year).unwrap().value;
                assert!((target - expected).abs() <= 1e-9 * expected);
            }
            let y0: f64 = truth.monthly[c][..12].iter().sum();
            assert_eq!(y0, panel.targets(c)[0].value);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = linear_spec();
        let (a, ta) = generate_synthetic_panel(&spec, 11).unwrap();
        let (b, tb) = generate_synthetic_panel(&spec, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = generate_synthetic_panel(&spec, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ar1_residual_autocorrelation() {
        let mut spec = linear_spec();
        spec.countries = 1;
        spec.start_year = 1950;
        spec.end_year = 2009; // 720 months
        spec.dgp.ar_rho = 0.5;
        spec.dgp.noise_sigma = 1.0;
        spec.dgp.intercept = 500.0;
        let (_, truth) = generate_synthetic_panel(&spec, 5).unwrap();
        let u = &truth.residuals[0];
        assert!(u.len() >= 600);
        let n = u.len() as f64;
        let mean = u.iter().sum::<f64>() / n;
        let var: f64 = u.iter().map(|x| (x - mean).powi(2)).sum();
        let cov: f64 = u.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        let r1 = cov / var;
        assert!((r1 - 0.5).abs() < 0.1, "lag-1 autocorrelation {r1}");
    }

    #[test]
    fn invalid_specs() {
        let mut spec = linear_spec();
        spec.countries = 0;
        assert!(matches!(generate_synthetic_panel(&spec, 0), Err(Error::InvalidSpec(_))));
        let mut spec = linear_spec();
        spec.end_year = spec.start_year - 1;
        assert!(matches!(generate_synthetic_panel(&spec, 0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn spec_json_fields() {
        let spec = SyntheticSpec::from_json(
            r#"{"countries": 3, "start_year": 2004, "end_year": 2020, "k_s": 4,
                "dgp": {"type": "log_linear", "coefficients": [0.5, 0.2], "ar_rho": 0.3, "noise_sigma": 0.05},
                "seed": 9}"#,
        )
        .unwrap();
        assert_eq!(spec.dgp.kind, DgpKind::LogLinear);
        assert_eq!(spec.samples, 5);
        assert_eq!(spec.seed, 9);
    }

    #[test]
    fn lagged_driver_uses_previous_year() {
        let mut spec = linear_spec();
        spec.dgp.lag_months = 12;
        let (panel, _) = generate_synthetic_panel(&spec, 4).unwrap();
        for c in 0..panel.n_countries() {
            for year in panel.start_year() + 1..=panel.end_year() {
                let prev: f64 = panel.svi(c, 0).year(year - 1).unwrap().iter().sum();
                let target = panel.target(c, year).unwrap().value;
                assert!((target - 2.0 * prev).abs() <= 1e-9 * target);
            }
        }
    }
}
