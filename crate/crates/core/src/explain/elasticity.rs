use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureSymbol};
use crate::model::Predictor;

/// Baseline predictions at or below this are left out of the average.
const MIN_BASELINE: f64 = 1e-9;

/// Distribution of the relative feature shock `δ` and the draws per row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub mean: f64,
    pub std: f64,
    pub n_draws: usize,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            mean: 0.01,
            std: 0.005,
            n_draws: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticityEstimate {
    pub eta: f64,
    pub n_draws: usize,
    /// Rows used in the average.
    pub n_obs: usize,
    /// Rows skipped for a non-positive baseline or an all-zero topic.
    pub excluded: usize,
}

/// Expected elasticity of the prediction with respect to one topic for one
/// country.
///
/// Every lag of the topic's annual SVI is scaled by `1 + δ` jointly. For each
/// observed row the relative change of the prediction divided by `δ` is
/// averaged over draws, then over rows.
pub fn expected_elasticity(
    model: &dyn Predictor,
    matrix: &FeatureMatrix,
    country: usize,
    topic: &str,
    perturb: &Perturbation,
    seed: u64,
) -> Result<ElasticityEstimate> {
    if perturb.n_draws == 0 {
        return Err(Error::InvalidInput("n_draws must be at least 1".into()));
    }
    let normal = Normal::new(perturb.mean, perturb.std)
        .map_err(|e| Error::InvalidInput(format!("perturbation distribution: {e}")))?;
    let cols = topic_columns(matrix, topic)?;
    let rows: Vec<usize> = matrix
        .country_rows(country)
        .into_iter()
        .filter(|&r| matrix.y[r].is_some())
        .collect();
    if rows.is_empty() {
        return Err(Error::NotEnoughRows(format!(
            "no observed rows for country index {country}"
        )));
    }

    let base_x = matrix.x.select_rows(&rows);
    let base = model.predict_rows(&base_x)?;
    let usable: Vec<usize> = (0..rows.len())
        .filter(|&i| base[i] > MIN_BASELINE && cols.iter().any(|&c| base_x[(i, c)] != 0.0))
        .collect();
    let excluded = rows.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::ZeroDenominator(format!(
            "every row of country index {country} has a non-positive prediction or zero `{topic}` SVI"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = perturb.n_draws;
    let mut deltas = Vec::with_capacity(usable.len() * n);
    while deltas.len() < usable.len() * n {
        let d: f64 = normal.sample(&mut rng);
        if d.abs() > 1e-12 && d > -1.0 {
            deltas.push(d);
        }
    }
    let shocked = DMatrix::from_fn(usable.len() * n, matrix.n_cols(), |r, c| {
        let v = base_x[(usable[r / n], c)];
        if cols.contains(&c) {
            v * (1.0 + deltas[r])
        } else {
            v
        }
    });
    let pert = model.predict_rows(&shocked)?;

    let mut total = 0.0;
    for (u, &i) in usable.iter().enumerate() {
        let y = base[i];
        let mut acc = 0.0;
        for k in 0..n {
            let r = u * n + k;
            acc += ((pert[r] - y) / y) / deltas[r];
        }
        total += acc / n as f64;
    }
    let eta = total / usable.len() as f64;
    if !eta.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite elasticity for `{topic}`")));
    }
    Ok(ElasticityEstimate {
        eta,
        n_draws: n,
        n_obs: usable.len(),
        excluded,
    })
}

fn topic_columns(matrix: &FeatureMatrix, topic: &str) -> Result<Vec<usize>> {
    let cols: Vec<usize> = matrix
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            matches!(c.symbol, FeatureSymbol::SviAnnualLag | FeatureSymbol::SviAnnualSum)
                && c.topic_or_variable.as_deref() == Some(topic)
        })
        .map(|(j, _)| j)
        .collect();
    if cols.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no annual SVI columns for topic `{topic}` in a {} design",
            matrix.config
        )));
    }
    Ok(cols)
}

/// Elasticities for every (country, topic) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElasticityTable {
    pub perturbation: Perturbation,
    pub entries: BTreeMap<(String, String), ElasticityEstimate>,
}

impl ElasticityTable {
    /// Pair `(c, k)` is seeded with `seed + c·n_topics + k`.
    pub fn compute(
        model: &dyn Predictor,
        matrix: &FeatureMatrix,
        topics: &[String],
        perturb: &Perturbation,
        seed: u64,
    ) -> Result<Self> {
        let pairs: Vec<(usize, usize)> = (0..matrix.countries.len())
            .flat_map(|c| (0..topics.len()).map(move |k| (c, k)))
            .collect();
        let estimates: Vec<ElasticityEstimate> = pairs
            .par_iter()
            .map(|&(c, k)| {
                let s = seed.wrapping_add((c * topics.len() + k) as u64);
                expected_elasticity(model, matrix, c, &topics[k], perturb, s)
            })
            .collect::<Result<_>>()?;
        let entries = pairs
            .iter()
            .zip(estimates)
            .map(|(&(c, k), e)| ((matrix.countries[c].clone(), topics[k].clone()), e))
            .collect();
        Ok(Self {
            perturbation: *perturb,
            entries,
        })
    }

    pub fn get(&self, country: &str, topic: &str) -> Option<&ElasticityEstimate> {
        self.entries.get(&(country.to_owned(), topic.to_owned()))
    }

    /// `country,topic,eta,n_draws,excluded`
    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut w = crate::csvout::Writer::create(path, comment)?;
        w.record(["country", "topic", "eta", "n_draws", "excluded"])?;
        for ((c, t), e) in &self.entries {
            w.record([
                c.clone(),
                t.clone(),
                e.eta.to_string(),
                e.n_draws.to_string(),
                e.excluded.to_string(),
            ])?;
        }
        w.finish()
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
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
        let mut entries = BTreeMap::new();
        let mut n_draws = 0;
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Csv {
                path: path.to_owned(),
                message: e.to_string(),
            })?;
            if rec.len() != 5 {
                return Err(schema(format!("expected 5 fields, found {}", rec.len())));
            }
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| schema(format!("non-numeric field `{}`", &rec[i])))
            };
            let est = ElasticityEstimate {
                eta: num(2)?,
                n_draws: num(3)? as usize,
                n_obs: 0,
                excluded: num(4)? as usize,
            };
            n_draws = est.n_draws;
            entries.insert((rec[0].to_owned(), rec[1].to_owned()), est);
        }
        if entries.is_empty() {
            return Err(schema("no elasticity rows".into()));
        }
        Ok(Self {
            perturbation: Perturbation {
                n_draws,
                ..Perturbation::default()
            },
            entries,
        })
    }
}
