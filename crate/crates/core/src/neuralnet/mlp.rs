//! Fully connected network with a country embedding, ReLU hidden layers and
//! post-activation batch normalization.
//!
//! Activations are stored feature-major (`width × batch`) so each layer is a
//! single `W · A` product.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub hidden_sizes: Vec<usize>,
    pub country_embedding_dim: usize,
    /// Raw feature width, country-id column included.
    pub input_width: usize,
    /// Position of the integer country-id column in a raw row.
    pub country_column: usize,
    pub n_countries: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl MlpArchitecture {
    pub const DEFAULT_HIDDEN: [usize; 3] = [200, 20, 20];
    pub const DEFAULT_EMBEDDING_DIM: usize = 2;

    pub fn new(input_width: usize, country_column: usize, n_countries: usize) -> Result<Self> {
        Self::with_hidden(Self::DEFAULT_HIDDEN.to_vec(), input_width, country_column, n_countries)
    }

    pub fn with_hidden(
        hidden_sizes: Vec<usize>,
        input_width: usize,
        country_column: usize,
        n_countries: usize,
    ) -> Result<Self> {
        if hidden_sizes.is_empty() || hidden_sizes.contains(&0) {
            return Err(Error::InvalidInput("hidden layers must be non-empty".into()));
        }
        if country_column >= input_width {
            return Err(Error::InvalidInput(format!(
                "country column {country_column} outside a {input_width}-wide row"
            )));
        }
        if n_countries == 0 {
            return Err(Error::InvalidInput("no countries to embed".into()));
        }
        Ok(Self {
            hidden_sizes,
            country_embedding_dim: Self::DEFAULT_EMBEDDING_DIM,
            input_width,
            country_column,
            n_countries,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        })
    }

    /// Width of the first layer's input once the country id is replaced by
    /// its embedding.
    pub fn embedded_width(&self) -> usize {
        self.input_width - 1 + self.country_embedding_dim
    }

    /// Whether the first hidden layer is wider than its input.
    pub fn is_overcomplete(&self) -> bool {
        self.hidden_sizes[0] > self.embedded_width()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
    pub running_mean: DVector<f64>,
    pub running_var: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    /// `out × in`
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub arch: MlpArchitecture,
    pub hidden: Vec<HiddenLayer>,
    /// `1 × last hidden width`
    pub out_weight: DMatrix<f64>,
    pub out_bias: f64,
    /// `n_countries × embedding_dim`
    pub embedding: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Role of a parameter tensor; decides whether weight decay applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
    Embedding,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight | ParamKind::Embedding)
    }
}

impl MlpParams {
    /// Uniform `±1/√fan_in` weights, zero biases, identity batch norm and
    /// `N(0, 0.1²)` embeddings.
    pub fn init<R: Rng>(arch: &MlpArchitecture, rng: &mut R) -> Self {
        let mut fan_in = arch.embedded_width();
        let mut hidden = Vec::with_capacity(arch.hidden_sizes.len());
        for &width in &arch.hidden_sizes {
            hidden.push(HiddenLayer {
                weight: uniform_matrix(width, fan_in, rng),
                bias: DVector::zeros(width),
                bn: BatchNorm {
                    gamma: DVector::from_element(width, 1.0),
                    beta: DVector::zeros(width),
                    running_mean: DVector::zeros(width),
                    running_var: DVector::from_element(width, 1.0),
                },
            });
            fan_in = width;
        }
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let embedding = DMatrix::from_fn(arch.n_countries, arch.country_embedding_dim, |_, _| normal.sample(rng));
        Self {
            arch: arch.clone(),
            hidden,
            out_weight: uniform_matrix(1, fan_in, rng),
            out_bias: 0.0,
            embedding,
        }
    }

    /// Every parameter tensor as a flat mutable slice, in a fixed order
    /// shared with [`Gradients::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(ParamKind, &mut [f64])> {
        let mut out: Vec<(ParamKind, &mut [f64])> = Vec::new();
        for layer in &mut self.hidden {
            out.push((ParamKind::Weight, layer.weight.as_mut_slice()));
            out.push((ParamKind::Bias, layer.bias.as_mut_slice()));
            out.push((ParamKind::BnScale, layer.bn.gamma.as_mut_slice()));
            out.push((ParamKind::BnShift, layer.bn.beta.as_mut_slice()));
        }
        out.push((ParamKind::Weight, self.out_weight.as_mut_slice()));
        out.push((ParamKind::Bias, std::slice::from_mut(&mut self.out_bias)));
        out.push((ParamKind::Embedding, self.embedding.as_mut_slice()));
        out
    }

    pub fn n_parameters(&self) -> usize {
        let mut copy = self.clone();
        copy.tensors_mut().iter().map(|(_, t)| t.len()).sum()
    }

    /// Builds the first-layer input (`embedded_width × batch`) from raw rows
    /// (`batch × input_width`), replacing the country id by its embedding.
    /// Also returns the country index of every row.
    fn embed(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<usize>)> {
        let arch = &self.arch;
        if x.ncols() != arch.input_width {
            return Err(Error::WidthMismatch {
                expected: arch.input_width,
                actual: x.ncols(),
            });
        }
        let cc = arch.country_column;
        let countries = (0..x.nrows())
            .map(|r| {
                let v = x[(r, cc)];
                let id = v.round();
                if (v - id).abs() > 1e-9 || id < 0.0 || id as usize >= arch.n_countries {
                    Err(Error::UnknownCountry(if id < 0.0 { usize::MAX } else { id as usize }))
                } else {
                    Ok(id as usize)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let plain = arch.input_width - 1;
        let a0 = DMatrix::from_fn(arch.embedded_width(), x.nrows(), |i, s| {
            if i < plain {
                x[(s, if i < cc { i } else { i + 1 })]
            } else {
                self.embedding[(countries[s], i - plain)]
            }
        });
        Ok((a0, countries))
    }

    /// Forward pass over a batch of raw rows.
    ///
    /// Train mode normalizes with batch statistics (and needs at least two
    /// rows); eval mode uses the running statistics. Running statistics are
    /// never touched here, see [`MlpParams::update_running_stats`].
    pub fn forward(&self, x: &DMatrix<f64>, mode: Mode) -> Result<(Vec<f64>, ForwardCache)> {
        let batch = x.nrows();
        if mode == Mode::Train && batch < 2 {
            return Err(Error::BatchTooSmall(batch));
        }
        let (a0, countries) = self.embed(x)?;
        let eps = self.arch.bn_eps;
        let mut layers = Vec::with_capacity(self.hidden.len());
        let mut a = a0.clone();
        for layer in &self.hidden {
            let mut z = &layer.weight * &a;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            let relu = z.map(|v| v.max(0.0));
            let width = relu.nrows();
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean = DVector::from_fn(width, |i, _| relu.row(i).sum() / batch as f64);
                    let var = DVector::from_fn(width, |i, _| {
                        relu.row(i).iter().map(|v| (v - mean[i]).powi(2)).sum::<f64>() / batch as f64
                    });
                    (mean, var)
                }
                Mode::Eval => (layer.bn.running_mean.clone(), layer.bn.running_var.clone()),
            };
            let inv_std = var.map(|v| 1.0 / (v + eps).sqrt());
            let x_hat = DMatrix::from_fn(width, batch, |i, s| (relu[(i, s)] - mean[i]) * inv_std[i]);
            let out = DMatrix::from_fn(width, batch, |i, s| {
                layer.bn.gamma[i] * x_hat[(i, s)] + layer.bn.beta[i]
            });
            layers.push(LayerCache {
                input: a,
                z,
                x_hat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            });
            a = out;
        }
        let pred: Vec<f64> = (&self.out_weight * &a).iter().map(|v| v + self.out_bias).collect();
        Ok((
            pred,
            ForwardCache {
                countries,
                layers,
                last: a,
            },
        ))
    }

    /// Predictions only (eval mode), chunked to bound memory on large inputs.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        const CHUNK: usize = 4096;
        if x.nrows() <= CHUNK {
            return Ok(self.forward(x, Mode::Eval)?.0);
        }
        let mut out = Vec::with_capacity(x.nrows());
        for start in (0..x.nrows()).step_by(CHUNK) {
            let n = CHUNK.min(x.nrows() - start);
            out.extend(self.forward(&x.rows(start, n).into_owned(), Mode::Eval)?.0);
        }
        Ok(out)
    }

    /// Exact gradients of the mean squared error `(1/B) Σ (ŷ - y)²` given a
    /// train-mode forward cache.
    pub fn backward(&self, cache: &ForwardCache, pred: &[f64], y: &[f64]) -> Result<Gradients> {
        let batch = pred.len();
        if batch < 2 {
            return Err(Error::BatchTooSmall(batch));
        }
        if y.len() != batch {
            return Err(Error::InvalidInput(format!(
                "{} targets for a batch of {batch}",
                y.len()
            )));
        }
        let d_pred = DMatrix::from_fn(1, batch, |_, s| 2.0 * (pred[s] - y[s]) / batch as f64);
        let out_weight = &d_pred * cache.last.transpose();
        let out_bias = d_pred.sum();
        let mut delta = self.out_weight.transpose() * &d_pred;

        let mut hidden = Vec::with_capacity(self.hidden.len());
        for (layer, lc) in self.hidden.iter().zip(&cache.layers).rev() {
            let width = delta.nrows();
            let gamma_grad = DVector::from_fn(width, |i, _| delta.row(i).dot(&lc.x_hat.row(i)));
            let beta_grad = DVector::from_fn(width, |i, _| delta.row(i).sum());
            // dx̂ = δ·γ; batch-norm backward with batch statistics
            let n = batch as f64;
            let mut dz = DMatrix::zeros(width, batch);
            for i in 0..width {
                let g = layer.bn.gamma[i];
                let sum_dxh = g * beta_grad[i];
                let sum_dxh_xh = g * gamma_grad[i];
                for s in 0..batch {
                    let dxh = g * delta[(i, s)];
                    let dr = lc.inv_std[i] / n * (n * dxh - sum_dxh - lc.x_hat[(i, s)] * sum_dxh_xh);
                    dz[(i, s)] = if lc.z[(i, s)] > 0.0 { dr } else { 0.0 };
                }
            }
            let weight = &dz * lc.input.transpose();
            let bias = DVector::from_fn(width, |i, _| dz.row(i).sum());
            delta = layer.weight.transpose() * &dz;
            hidden.push(LayerGradients {
                weight,
                bias,
                gamma: gamma_grad,
                beta: beta_grad,
            });
        }
        hidden.reverse();

        let arch = &self.arch;
        let plain = arch.input_width - 1;
        let mut embedding = DMatrix::zeros(arch.n_countries, arch.country_embedding_dim);
        for (s, &c) in cache.countries.iter().enumerate() {
            for e in 0..arch.country_embedding_dim {
                embedding[(c, e)] += delta[(plain + e, s)];
            }
        }
        Ok(Gradients {
            hidden,
            out_weight,
            out_bias,
            embedding,
        })
    }

    /// Exponential moving update of the batch-norm running statistics from a
    /// train-mode cache. Variances use the unbiased batch estimate.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let momentum = self.arch.bn_momentum;
        for (layer, lc) in self.hidden.iter_mut().zip(&cache.layers) {
            let n = lc.input.ncols() as f64;
            let unbiased = n / (n - 1.0);
            let bn = &mut layer.bn;
            bn.running_mean = &bn.running_mean * (1.0 - momentum) + &lc.batch_mean * momentum;
            bn.running_var = &bn.running_var * (1.0 - momentum) + &lc.batch_var * (momentum * unbiased);
        }
    }
}

fn uniform_matrix<R: Rng>(rows: usize, fan_in: usize, rng: &mut R) -> DMatrix<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    DMatrix::from_fn(rows, fan_in, |_, _| dist.sample(rng))
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: DMatrix<f64>,
    z: DMatrix<f64>,
    x_hat: DMatrix<f64>,
    inv_std: DVector<f64>,
    batch_mean: DVector<f64>,
    batch_var: DVector<f64>,
}

/// Intermediate values kept by [`MlpParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    countries: Vec<usize>,
    layers: Vec<LayerCache>,
    last: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
}

/// Gradient structure mirroring [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<LayerGradients>,
    pub out_weight: DMatrix<f64>,
    pub out_bias: f64,
    pub embedding: DMatrix<f64>,
}

impl Gradients {
    /// Flat views in the order of [`MlpParams::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.hidden {
            out.push(l.weight.as_slice());
            out.push(l.bias.as_slice());
            out.push(l.gamma.as_slice());
            out.push(l.beta.as_slice());
        }
        out.push(self.out_weight.as_slice());
        out.push(std::slice::from_ref(&self.out_bias));
        out.push(self.embedding.as_slice());
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .into_iter()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Mean squared error of a prediction vector.
pub fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
}
