//! The trainable network: a multilayer-perceptron feature extractor producing
//! fixed-dimension embeddings, a linear head mapping embeddings to gaze
//! angles, reverse-mode gradients for both, and an SGD-with-momentum
//! optimizer with coupled L2 weight decay.
//!
//! All arithmetic is f64 and single-threaded per model, so every operation is
//! bit-reproducible given identical inputs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::epc::Embedding;
use crate::error::{Error, Result};
use crate::gaze::GazeAngles;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Relu
    }
}

/// Network shape. The extractor applies each hidden layer with the
/// activation, then a final linear projection to `embedding_dim`; the head is
/// a linear (optionally affine) map from embeddings to (yaw, pitch).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub embedding_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_true")]
    pub head_bias: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            hidden_layers: vec![64, 64],
            embedding_dim: 16,
            activation: Activation::Relu,
            head_bias: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidInput("input_dim must be >= 1".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::InvalidInput("embedding_dim must be >= 1".into()));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::InvalidInput(
                "hidden_layers must be non-empty with positive widths".into(),
            ));
        }
        Ok(())
    }

    /// (rows, cols) of every weight matrix in declared order: extractor
    /// layers in sequence, then the head.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers.len() + 2);
        let mut prev = self.input_dim;
        for &h in &self.hidden_layers {
            shapes.push((h, prev));
            prev = h;
        }
        shapes.push((self.embedding_dim, prev));
        shapes.push((2, self.embedding_dim));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// All trainable parameters. `extractor` holds the hidden layers followed by
/// the linear embedding projection; the head maps embeddings to two angles.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub extractor: Vec<LinearLayer>,
    pub head_weight: DMatrix<f64>,
    pub head_bias: Option<DVector<f64>>,
}

fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
}

fn take_row_major(m: &mut DMatrix<f64>, it: &mut impl Iterator<Item = f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            m[(r, c)] = it.next().expect("flat parameter vector too short");
        }
    }
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let shapes = cfg.layer_shapes();
        let n_ext = shapes.len() - 1;
        let extractor = shapes[..n_ext]
            .iter()
            .map(|&(rows, cols)| LinearLayer {
                weight: DMatrix::zeros(rows, cols),
                bias: DVector::zeros(rows),
            })
            .collect();
        let (hr, hc) = shapes[n_ext];
        ModelParams {
            extractor,
            head_weight: DMatrix::zeros(hr, hc),
            head_bias: cfg.head_bias.then(|| DVector::zeros(hr)),
        }
    }

    pub fn n_params(&self) -> usize {
        self.extractor
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum::<usize>()
            + self.head_weight.len()
            + self.head_bias.as_ref().map_or(0, |b| b.len())
    }

    /// Flatten in declared order: each extractor layer's weight (row-major)
    /// then bias, then the head weight (row-major) then head bias if present.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.extractor {
            push_row_major(&mut out, &l.weight);
            out.extend(l.bias.iter());
        }
        push_row_major(&mut out, &self.head_weight);
        if let Some(b) = &self.head_bias {
            out.extend(b.iter());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten); shapes come from `self`.
    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch { expected: self.n_params(), got: flat.len() });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.extractor {
            take_row_major(&mut l.weight, &mut it);
            for b in l.bias.iter_mut() {
                *b = it.next().unwrap();
            }
        }
        take_row_major(&mut self.head_weight, &mut it);
        if let Some(bias) = &mut self.head_bias {
            for b in bias.iter_mut() {
                *b = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }

    /// Elementwise accumulation; shapes must match.
    pub fn add_assign(&mut self, other: &ModelParams) -> Result<()> {
        if self.extractor.len() != other.extractor.len() {
            return Err(Error::DimensionMismatch {
                expected: self.extractor.len(),
                got: other.extractor.len(),
            });
        }
        for (a, b) in self.extractor.iter_mut().zip(&other.extractor) {
            if a.weight.shape() != b.weight.shape() {
                return Err(Error::DimensionMismatch { expected: a.weight.len(), got: b.weight.len() });
            }
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
        self.head_weight += &other.head_weight;
        if let (Some(a), Some(b)) = (&mut self.head_bias, &other.head_bias) {
            *a += b;
        }
        Ok(())
    }
}

/// Initialize parameters from a seed: weights uniform in (-a, a) with
/// a = sqrt(1/fan_in), biases zero. Entries are drawn in declared flatten
/// order, so the result is bitwise deterministic per seed.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(cfg);
    for l in &mut params.extractor {
        let a = (1.0 / l.weight.ncols() as f64).sqrt();
        for r in 0..l.weight.nrows() {
            for c in 0..l.weight.ncols() {
                l.weight[(r, c)] = rng.random_range(-a..a);
            }
        }
    }
    let a = (1.0 / params.head_weight.ncols() as f64).sqrt();
    for r in 0..params.head_weight.nrows() {
        for c in 0..params.head_weight.ncols() {
            params.head_weight[(r, c)] = rng.random_range(-a..a);
        }
    }
    Ok(params)
}

/// Forward-pass caches for one batch; inputs are columns.
#[derive(Debug, Clone)]
pub struct BatchForward {
    /// activations[0] is the input batch; the last entry is the embedding
    /// batch (embedding_dim x B).
    pub activations: Vec<DMatrix<f64>>,
    /// Pre-activation values per extractor layer.
    pub pre_activations: Vec<DMatrix<f64>>,
    /// Head output, 2 x B: row 0 yaw, row 1 pitch.
    pub predictions: DMatrix<f64>,
}

impl BatchForward {
    pub fn embeddings(&self) -> &DMatrix<f64> {
        self.activations.last().expect("non-empty extractor")
    }

    pub fn embedding_col(&self, j: usize) -> Embedding {
        self.embeddings().column(j).into_owned()
    }

    pub fn prediction(&self, j: usize) -> GazeAngles {
        GazeAngles::new(self.predictions[(0, j)], self.predictions[(1, j)])
    }
}

fn add_bias_per_column(m: &mut DMatrix<f64>, bias: &DVector<f64>) {
    for mut col in m.column_iter_mut() {
        col += bias;
    }
}

/// Forward a batch of inputs (columns) through extractor and head.
pub fn forward_batch(
    cfg: &ModelConfig,
    params: &ModelParams,
    inputs: &DMatrix<f64>,
) -> Result<BatchForward> {
    if inputs.nrows() != cfg.input_dim {
        return Err(Error::DimensionMismatch { expected: cfg.input_dim, got: inputs.nrows() });
    }
    let n_ext = params.extractor.len();
    let mut activations = Vec::with_capacity(n_ext + 1);
    let mut pre_activations = Vec::with_capacity(n_ext);
    activations.push(inputs.clone());
    for (i, layer) in params.extractor.iter().enumerate() {
        let mut z = &layer.weight * activations.last().unwrap();
        add_bias_per_column(&mut z, &layer.bias);
        let a = if i + 1 < n_ext {
            match cfg.activation {
                Activation::Relu => z.map(|v| if v > 0.0 { v } else { 0.0 }),
                Activation::Tanh => z.map(f64::tanh),
            }
        } else {
            z.clone()
        };
        pre_activations.push(z);
        activations.push(a);
    }
    let mut predictions = &params.head_weight * activations.last().unwrap();
    if let Some(b) = &params.head_bias {
        add_bias_per_column(&mut predictions, b);
    }
    Ok(BatchForward { activations, pre_activations, predictions })
}

/// Forward a single input.
pub fn forward(
    cfg: &ModelConfig,
    params: &ModelParams,
    input: &DVector<f64>,
) -> Result<(Embedding, GazeAngles)> {
    let batch = DMatrix::from_columns(&[input.clone()]);
    let fwd = forward_batch(cfg, params, &batch)?;
    Ok((fwd.embedding_col(0), fwd.prediction(0)))
}

/// Reverse-mode gradients for one batch.
///
/// `d_embeddings` (embedding_dim x B) and `d_predictions` (2 x B) are the
/// upstream gradients of the total loss w.r.t. each sample's embedding and
/// prediction; any 1/B scaling belongs to the loss side, so contributions are
/// summed here. Gradients come back in a `ModelParams`-shaped container.
pub fn backward(
    cfg: &ModelConfig,
    params: &ModelParams,
    fwd: &BatchForward,
    d_embeddings: &DMatrix<f64>,
    d_predictions: &DMatrix<f64>,
) -> Result<ModelParams> {
    let emb = fwd.embeddings();
    if d_embeddings.shape() != emb.shape() {
        return Err(Error::DimensionMismatch { expected: emb.ncols(), got: d_embeddings.ncols() });
    }
    if d_predictions.shape() != fwd.predictions.shape() {
        return Err(Error::DimensionMismatch {
            expected: fwd.predictions.ncols(),
            got: d_predictions.ncols(),
        });
    }
    let mut grads = ModelParams::zeros(cfg);

    // Head.
    grads.head_weight = d_predictions * emb.transpose();
    if let Some(b) = &mut grads.head_bias {
        for r in 0..b.len() {
            b[r] = d_predictions.row(r).sum();
        }
    }

    // Total gradient reaching the embedding: direct + through the head.
    let mut delta = params.head_weight.transpose() * d_predictions + d_embeddings;

    let n_ext = params.extractor.len();
    for i in (0..n_ext).rev() {
        // The last extractor layer is linear; hidden layers apply the activation.
        if i + 1 < n_ext {
            match cfg.activation {
                Activation::Relu => {
                    let z = &fwd.pre_activations[i];
                    delta.zip_apply(z, |d, zv| {
                        if zv <= 0.0 {
                            *d = 0.0;
                        }
                    });
                }
                Activation::Tanh => {
                    let a = &fwd.activations[i + 1];
                    delta.zip_apply(a, |d, av| *d *= 1.0 - av * av);
                }
            }
        }
        grads.extractor[i].weight = &delta * fwd.activations[i].transpose();
        for r in 0..grads.extractor[i].bias.len() {
            grads.extractor[i].bias[r] = delta.row(r).sum();
        }
        if i > 0 {
            delta = params.extractor[i].weight.transpose() * delta;
        }
    }
    Ok(grads)
}

/// Optimizer hyperparameters as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, momentum: 0.9, weight_decay: 5e-4 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidInput("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidInput("momentum must be in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidInput("weight_decay must be >= 0".into()));
        }
        Ok(())
    }

    pub fn state(&self) -> OptimizerState {
        OptimizerState::new(self.learning_rate, self.momentum, self.weight_decay)
    }
}

/// SGD-with-momentum hyperparameters and per-parameter velocity, stored flat
/// in declared parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<f64>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self { learning_rate, momentum, weight_decay, velocity: Vec::new() }
    }
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self::new(1e-3, 0.9, 5e-4)
    }
}

/// One optimizer step: v <- momentum*v + grad + weight_decay*param;
/// param <- param - lr*v. Weight decay is coupled into the momentum update
/// and applies to every parameter.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
) -> Result<()> {
    let mut flat = params.flatten();
    let flat_grads = grads.flatten();
    if flat_grads.len() != flat.len() {
        return Err(Error::DimensionMismatch { expected: flat.len(), got: flat_grads.len() });
    }
    if state.velocity.len() != flat.len() {
        state.velocity = vec![0.0; flat.len()];
    }
    let mut finite = true;
    for i in 0..flat.len() {
        let v = state.momentum * state.velocity[i]
            + flat_grads[i]
            + state.weight_decay * flat[i];
        state.velocity[i] = v;
        flat[i] -= state.learning_rate * v;
        finite &= flat[i].is_finite();
    }
    params.set_from_flat(&flat)?;
    if !finite {
        return Err(Error::NonFiniteUpdate { step: 0 });
    }
    Ok(())
}

/// Training stage marker carried by models and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Initialized,
    Pretrained,
    Adapted,
}

/// A model bundles its shape, parameters, optimizer state, and stage marker.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub stage: Stage,
}

impl Model {
    pub fn new(config: ModelConfig, optimizer: OptimizerState, init_seed: u64) -> Result<Self> {
        let params = init_params(&config, init_seed)?;
        Ok(Model { config, params, optimizer, stage: Stage::Initialized })
    }

    pub fn forward_batch(&self, inputs: &DMatrix<f64>) -> Result<BatchForward> {
        forward_batch(&self.config, &self.params, inputs)
    }

    pub fn forward(&self, input: &DVector<f64>) -> Result<(Embedding, GazeAngles)> {
        forward(&self.config, &self.params, input)
    }

    pub fn predict(&self, input: &DVector<f64>) -> Result<GazeAngles> {
        Ok(self.forward(input)?.1)
    }
}
