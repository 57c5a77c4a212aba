use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::AdamW;
use super::mlp::{mse, MlpArchitecture, MlpParams, Mode};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureSymbol};

/// Optimizer, early-stopping and preprocessing settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Non-improving epochs tolerated before training stops.
    pub patience: usize,
    /// Share of the most recent training years held out for early stopping.
    pub validation_fraction: f64,
    /// Train on `ln y` and exponentiate predictions.
    pub log_target: bool,
    /// z-score continuous columns and the (transformed) target.
    pub standardize: bool,
    pub ensemble_size: usize,
    pub hidden_sizes: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            max_epochs: 2000,
            patience: 50,
            validation_fraction: 0.15,
            log_target: true,
            standardize: true,
            ensemble_size: 10,
            hidden_sizes: MlpArchitecture::DEFAULT_HIDDEN.to_vec(),
            seed: 0,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidTrainSpec(m.to_owned()));
        if self.patience < 1 {
            return fail("patience must be at least 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail("validation_fraction must lie in (0, 1)");
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2");
        }
        if self.max_epochs < 1 {
            return fail("max_epochs must be at least 1");
        }
        if self.ensemble_size < 1 {
            return fail("ensemble_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return fail("learning_rate and weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// Column and target scaling fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub col_mean: Vec<f64>,
    pub col_std: Vec<f64>,
    pub log_target: bool,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Preprocessing {
    pub fn fit(matrix: &FeatureMatrix, y: &[f64], spec: &TrainSpec) -> Result<Self> {
        let n = matrix.n_rows() as f64;
        let mut col_mean = vec![0.0; matrix.n_cols()];
        let mut col_std = vec![1.0; matrix.n_cols()];
        if spec.standardize {
            for (j, meta) in matrix.columns.iter().enumerate() {
                if !meta.symbol.is_continuous() {
                    continue;
                }
                let col = matrix.x.column(j);
                let mean = col.sum() / n;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                col_mean[j] = mean;
                col_std[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
            }
        }
        let mut pre = Self {
            col_mean,
            col_std,
            log_target: spec.log_target,
            target_mean: 0.0,
            target_std: 1.0,
        };
        if spec.standardize {
            let t = y.iter().map(|&v| pre.forward_target(v)).collect::<Result<Vec<_>>>()?;
            let mean = t.iter().sum::<f64>() / t.len() as f64;
            let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.len() as f64;
            pre.target_mean = mean;
            pre.target_std = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
        Ok(pre)
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.col_mean.len() {
            return Err(Error::WidthMismatch {
                expected: self.col_mean.len(),
                actual: x.ncols(),
            });
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| {
            (x[(r, c)] - self.col_mean[c]) / self.col_std[c]
        }))
    }

    pub fn forward_target(&self, y: f64) -> Result<f64> {
        let t = if self.log_target {
            if !(y > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "log-scaled training needs positive targets, got {y}"
                )));
            }
            y.ln()
        } else {
            y
        };
        Ok((t - self.target_mean) / self.target_std)
    }

    pub fn inverse_target(&self, z: f64) -> f64 {
        let t = z * self.target_std + self.target_mean;
        if self.log_target {
            t.exp()
        } else {
            t
        }
    }
}

/// Patience-based stopping rule on the validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    bad_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    /// Records the loss of `epoch` (1-based). Training stops once more than
    /// `patience` consecutive epochs failed to beat the best loss.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            StopDecision {
                improved: true,
                stop: false,
            }
        } else {
            self.bad_epochs += 1;
            StopDecision {
                improved: false,
                stop: self.bad_epochs > self.patience,
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

/// Standardized training data with its time-ordered validation split.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub preprocessing: Preprocessing,
    pub arch: MlpArchitecture,
}

/// Fits preprocessing and splits off the most recent years for validation.
/// Rows without an observed target are dropped first.
pub fn prepare(matrix: &FeatureMatrix, spec: &TrainSpec) -> Result<PreparedData> {
    spec.validate()?;
    let matrix = matrix.targeted();
    if matrix.n_rows() < 3 {
        return Err(Error::NotEnoughRows(format!(
            "{} rows with observed targets",
            matrix.n_rows()
        )));
    }
    let country_column = matrix
        .columns
        .iter()
        .position(|c| c.symbol == FeatureSymbol::CountryId)
        .ok_or_else(|| Error::InvalidInput("design matrix has no country id column".into()))?;
    let arch = MlpArchitecture::with_hidden(
        spec.hidden_sizes.clone(),
        matrix.n_cols(),
        country_column,
        matrix.countries.len(),
    )?;
    let y_raw = matrix.targets()?;
    let preprocessing = Preprocessing::fit(&matrix, &y_raw, spec)?;
    let x = preprocessing.apply(&matrix.x)?;
    let y = y_raw
        .iter()
        .map(|&v| preprocessing.forward_target(v))
        .collect::<Result<Vec<_>>>()?;

    let (train, val) = time_ordered_split(&matrix, spec.validation_fraction)?;
    Ok(PreparedData {
        x,
        y,
        train,
        val,
        preprocessing,
        arch,
    })
}

fn time_ordered_split(matrix: &FeatureMatrix, fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut years: Vec<i32> = matrix.rows.iter().map(|k| k.year).collect();
    years.sort_unstable();
    years.dedup();
    let n = matrix.n_rows();
    let (train, val): (Vec<usize>, Vec<usize>) = if years.len() >= 2 {
        let n_val = ((years.len() as f64 * fraction).round() as usize).clamp(1, years.len() - 1);
        let cutoff = years[years.len() - n_val];
        (0..n).partition(|&r| matrix.rows[r].year < cutoff)
    } else {
        let n_val = ((n as f64 * fraction).ceil() as usize).clamp(1, n - 2);
        ((0..n - n_val).collect(), (n - n_val..n).collect())
    };
    if train.len() < 2 {
        return Err(Error::NotEnoughRows(format!(
            "{} training rows after the validation split",
            train.len()
        )));
    }
    Ok((train, val))
}

/// A trained network with the preprocessing it expects.
#[derive(Debug, Clone)]
pub struct TrainedNetwork {
    pub params: MlpParams,
    pub preprocessing: Preprocessing,
    pub history: TrainHistory,
}

/// Trains a single network on the targeted rows of `matrix`.
pub fn train_one(matrix: &FeatureMatrix, spec: &TrainSpec, seed: u64) -> Result<TrainedNetwork> {
    let data = prepare(matrix, spec)?;
    let (params, history) = fit_member(&data, spec, seed)?;
    Ok(TrainedNetwork {
        params,
        preprocessing: data.preprocessing,
        history,
    })
}

/// Runs the AdamW loop on prepared data and returns the parameters of the
/// best validation epoch.
pub fn fit_member(data: &PreparedData, spec: &TrainSpec, seed: u64) -> Result<(MlpParams, TrainHistory)> {
    fit_member_with(data, spec, seed, None)
}

/// Like [`fit_member`], with an optional hook that replaces the validation
/// loss of each epoch (`hook(epoch, computed_loss)`).
pub fn fit_member_with(
    data: &PreparedData,
    spec: &TrainSpec,
    seed: u64,
    val_hook: Option<&dyn Fn(usize, f64) -> f64>,
) -> Result<(MlpParams, TrainHistory)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = MlpParams::init(&data.arch, &mut rng);
    let mut best = params.clone();
    let mut opt = AdamW::new(spec.learning_rate, spec.weight_decay);
    let mut stopper = EarlyStopping::new(spec.patience);
    let mut epochs = Vec::new();
    let mut order = data.train.clone();

    let x_val = data.x.select_rows(&data.val);
    let y_val: Vec<f64> = data.val.iter().map(|&i| data.y[i]).collect();
    let mut stopped_epoch = spec.max_epochs;

    for epoch in 1..=spec.max_epochs {
        order.shuffle(&mut rng);
        let mut batches: Vec<&[usize]> = order.chunks(spec.batch_size).collect();
        if batches.len() > 1 && batches[batches.len() - 1].len() == 1 {
            // a single leftover row cannot form batch statistics; fold it in
            let n = batches.len();
            let start = order.len() - batches[n - 2].len() - 1;
            batches.truncate(n - 2);
            batches.push(&order[start..]);
        }

        let mut loss_sum = 0.0;
        for batch in &batches {
            let xb = data.x.select_rows(batch.iter());
            let yb: Vec<f64> = batch.iter().map(|&i| data.y[i]).collect();
            let (pred, cache) = params.forward(&xb, Mode::Train)?;
            let loss = mse(&pred, &yb);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            loss_sum += loss * batch.len() as f64;
            let grads = params.backward(&cache, &pred, &yb)?;
            params.update_running_stats(&cache);
            let mut tensors = params.tensors_mut();
            opt.step(&mut tensors, &grads.tensors());
        }
        let train_loss = loss_sum / order.len() as f64;

        let mut val_loss = if data.val.is_empty() {
            train_loss
        } else {
            mse(&params.forward(&x_val, Mode::Eval)?.0, &y_val)
        };
        if let Some(hook) = val_hook {
            val_loss = hook(epoch, val_loss);
        }
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        let decision = stopper.observe(epoch, val_loss);
        if decision.improved {
            best = params.clone();
        }
        if decision.stop {
            stopped_epoch = epoch;
            break;
        }
    }
    Ok((
        best,
        TrainHistory {
            epochs,
            best_epoch: stopper.best_epoch(),
            stopped_epoch,
        },
    ))
}
