use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{MlpArchitecture, MlpParams};
use super::train::{fit_member, prepare, Preprocessing, TrainHistory, TrainSpec};
use crate::error::{Error, Result};
use crate::features::{ConfigId, FeatureColumnMeta, FeatureMatrix};
use crate::model::Predictor;

/// Independently seeded networks sharing one preprocessing. Predictions are
/// the arithmetic mean of the members' back-transformed outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpEnsemble {
    pub config: ConfigId,
    pub tau: usize,
    pub columns: Vec<FeatureColumnMeta>,
    pub countries: Vec<String>,
    pub spec: TrainSpec,
    pub arch: MlpArchitecture,
    pub preprocessing: Preprocessing,
    pub members: Vec<MlpParams>,
    pub histories: Vec<TrainHistory>,
}

/// Trains `spec.ensemble_size` members with seeds `spec.seed + i`.
pub fn train_ensemble(matrix: &FeatureMatrix, spec: &TrainSpec) -> Result<MlpEnsemble> {
    let data = prepare(matrix, spec)?;
    let fitted: Vec<(MlpParams, TrainHistory)> = (0..spec.ensemble_size)
        .into_par_iter()
        .map(|i| fit_member(&data, spec, spec.seed.wrapping_add(i as u64)))
        .collect::<Result<_>>()?;
    let (members, histories) = fitted.into_iter().unzip();
    Ok(MlpEnsemble {
        config: matrix.config,
        tau: matrix.tau,
        columns: matrix.columns.clone(),
        countries: matrix.countries.clone(),
        spec: spec.clone(),
        arch: data.arch,
        preprocessing: data.preprocessing,
        members,
        histories,
    })
}

impl MlpEnsemble {
    /// Predicts every row of a design matrix built with the same layout.
    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<f64>> {
        if matrix.columns != self.columns {
            return Err(Error::ColumnMismatch(format!(
                "model expects {} columns of {}, got {} columns of {}",
                self.columns.len(),
                self.config,
                matrix.columns.len(),
                matrix.config
            )));
        }
        self.predict_raw(&matrix.x)
    }

    /// Member predictions on the original target scale, one vector per member.
    pub fn member_predictions(&self, x: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
        let z = self.preprocessing.apply(x)?;
        self.members
            .par_iter()
            .map(|m| {
                Ok(m.predict(&z)?
                    .into_iter()
                    .map(|v| self.preprocessing.inverse_target(v))
                    .collect())
            })
            .collect()
    }

    pub fn predict_raw(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let per_member = self.member_predictions(x)?;
        let mut mean = vec![0.0; x.nrows()];
        for p in &per_member {
            for (acc, v) in mean.iter_mut().zip(p) {
                *acc += v;
            }
        }
        let n = per_member.len() as f64;
        Ok(mean.into_iter().map(|v| v / n).collect())
    }
}

impl Predictor for MlpEnsemble {
    fn predict_rows(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.predict_raw(x)
    }

    fn input_width(&self) -> usize {
        self.columns.len()
    }
}
