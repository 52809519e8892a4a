//! Minimal dense feed-forward network: batched forward pass, exact
//! backpropagation, plain SGD, inverted dropout, softmax cross-entropy.
//!
//! Weight matrices are stored `input_dim × output_dim` so a batch `X`
//! (one row per sample) maps to `X·W + b`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Linear,
    Softmax,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Sigmoid => z.mapv_inplace(sigmoid),
            Activation::Linear => {}
            Activation::Softmax => {
                for mut row in z.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|v| v / sum);
                }
            }
        }
    }

    /// Converts a gradient w.r.t. the activation output into one w.r.t. the
    /// pre-activation, given the pre-activation `z` and output `a`.
    fn backprop(self, z: &Array2<f64>, a: &Array2<f64>, mut grad: Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Relu => {
                Zip::from(&mut grad).and(z).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            Activation::Tanh => Zip::from(&mut grad).and(a).for_each(|g, &a| *g *= 1.0 - a * a),
            Activation::Sigmoid => Zip::from(&mut grad).and(a).for_each(|g, &a| *g *= a * (1.0 - a)),
            Activation::Linear => {}
            Activation::Softmax => {
                for (mut g, p) in grad.rows_mut().into_iter().zip(a.rows()) {
                    let dot: f64 = g.iter().zip(p.iter()).map(|(g, p)| g * p).sum();
                    Zip::from(&mut g).and(&p).for_each(|g, &p| *g = p * (*g - dot));
                }
            }
        }
        grad
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            input_dim,
            output_dim,
            activation,
        }
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::InvalidNetwork("no layers".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(Error::InvalidNetwork(format!("layer {i} has a zero dimension")));
        }
        if s.activation == Activation::Softmax && i + 1 != specs.len() {
            return Err(Error::InvalidNetwork(format!("softmax on hidden layer {i}")));
        }
        if i > 0 && specs[i - 1].output_dim != s.input_dim {
            return Err(Error::InvalidNetwork(format!(
                "layer {} outputs {} but layer {i} expects {}",
                i - 1,
                specs[i - 1].output_dim,
                s.input_dim
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetwork {
    pub layers: Vec<LayerSpec>,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    /// Inverted-dropout rate applied to hidden activations in training mode.
    pub dropout_rate: f64,
}

/// Per-layer values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input fed into each layer (after dropout of the previous layer).
    pub inputs: Vec<Array2<f64>>,
    pub pre_activations: Vec<Array2<f64>>,
    /// Activation outputs before dropout.
    pub activations: Vec<Array2<f64>>,
    /// Scaled dropout masks (0 or 1/(1-p)) for hidden layers, when active.
    pub masks: Vec<Option<Array2<f64>>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("network has at least one layer")
    }

    pub fn logits(&self) -> &Array2<f64> {
        self.pre_activations.last().expect("network has at least one layer")
    }
}

/// Where the upstream loss gradient attaches to the network output.
#[derive(Debug, Clone)]
pub enum OutputGrad {
    /// d loss / d (final activation output)
    Activation(Array2<f64>),
    /// d loss / d (final pre-activation); used for fused softmax cross-entropy
    PreActivation(Array2<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Gradients {
            weights: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl DenseNetwork {
    /// Glorot-uniform weights, zero biases, no dropout.
    pub fn init(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_specs(specs)?;
        let mut rng = stream(seed, "init", 0);
        let weights = specs
            .iter()
            .map(|s| {
                let limit = (6.0 / (s.input_dim + s.output_dim) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                Array2::from_shape_simple_fn((s.input_dim, s.output_dim), || dist.sample(&mut rng))
            })
            .collect();
        let biases = specs.iter().map(|s| Array1::zeros(s.output_dim)).collect();
        Ok(DenseNetwork {
            layers: specs.to_vec(),
            weights,
            biases,
            dropout_rate: 0.0,
        })
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidNetwork(format!("dropout rate {rate} not in [0,1)")));
        }
        self.dropout_rate = rate;
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|s| s.input_dim * s.output_dim + s.output_dim)
            .sum()
    }

    /// Checks layer consistency and parameter shapes/finiteness.
    pub fn validate(&self) -> Result<()> {
        validate_specs(&self.layers)?;
        if self.weights.len() != self.layers.len() || self.biases.len() != self.layers.len() {
            return Err(Error::InvalidNetwork("parameter count does not match layers".into()));
        }
        for (i, s) in self.layers.iter().enumerate() {
            if self.weights[i].dim() != (s.input_dim, s.output_dim) || self.biases[i].len() != s.output_dim {
                return Err(Error::InvalidNetwork(format!("layer {i} parameter shape")));
            }
        }
        let finite = self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite("network parameters"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidNetwork("dropout rate".into()));
        }
        Ok(())
    }

    /// Batched forward pass. In training mode hidden activations go through
    /// inverted dropout; in evaluation mode nothing is masked or rescaled.
    pub fn forward<R: Rng + ?Sized>(&self, x: ArrayView2<f64>, train_mode: bool, rng: &mut R) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let n = self.layers.len();
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(n),
            pre_activations: Vec::with_capacity(n),
            activations: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
        };
        let mut input = x.to_owned();
        for (i, spec) in self.layers.iter().enumerate() {
            let mut z = input.dot(&self.weights[i]);
            z += &self.biases[i];
            let mut a = z.clone();
            spec.activation.apply(&mut a);
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("activation"));
            }
            let hidden = i + 1 < n;
            let mask = if hidden && train_mode && self.dropout_rate > 0.0 {
                let keep = 1.0 - self.dropout_rate;
                let scale = 1.0 / keep;
                Some(Array2::from_shape_simple_fn(a.raw_dim(), || {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        0.0
                    }
                }))
            } else {
                None
            };
            let next = match &mask {
                Some(m) => &a * m,
                None => a.clone(),
            };
            cache.inputs.push(input);
            cache.pre_activations.push(z);
            cache.activations.push(a);
            cache.masks.push(mask);
            input = next;
        }
        Ok(cache)
    }

    /// Evaluation-mode output for a single input vector.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        // Eval mode draws no randomness.
        let mut rng = crate::rng::seeded(0);
        let cache = self.forward(view, false, &mut rng)?;
        Ok(cache.output().row(0).to_vec())
    }

    /// Evaluation-mode output for a batch.
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut rng = crate::rng::seeded(0);
        let mut cache = self.forward(x, false, &mut rng)?;
        Ok(cache.activations.pop().expect("at least one layer"))
    }

    /// Exact gradients of the loss w.r.t. every parameter, plus the gradient
    /// w.r.t. the network input.
    pub fn backward(&self, cache: &ForwardCache, grad: OutputGrad) -> Result<(Gradients, Array2<f64>)> {
        let n = self.layers.len();
        if cache.activations.len() != n {
            return Err(Error::InvalidNetwork("cache does not match network".into()));
        }
        let out_shape = cache.output().raw_dim();
        let mut dz = match grad {
            OutputGrad::Activation(g) => {
                if g.raw_dim() != out_shape {
                    return Err(Error::DimensionMismatch {
                        expected: out_shape[1],
                        got: g.ncols(),
                    });
                }
                self.layers[n - 1]
                    .activation
                    .backprop(&cache.pre_activations[n - 1], &cache.activations[n - 1], g)
            }
            OutputGrad::PreActivation(g) => {
                if g.raw_dim() != out_shape {
                    return Err(Error::DimensionMismatch {
                        expected: out_shape[1],
                        got: g.ncols(),
                    });
                }
                g
            }
        };
        let mut grads = Gradients::zeros_like(self);
        for i in (0..n).rev() {
            grads.weights[i] = cache.inputs[i].t().dot(&dz);
            grads.biases[i] = dz.sum_axis(Axis(0));
            let mut d_input = dz.dot(&self.weights[i].t());
            if i == 0 {
                return Ok((grads, d_input));
            }
            if let Some(mask) = &cache.masks[i - 1] {
                d_input *= mask;
            }
            dz = self.layers[i - 1].activation.backprop(
                &cache.pre_activations[i - 1],
                &cache.activations[i - 1],
                d_input,
            );
        }
        unreachable!("loop returns at layer 0")
    }

    /// θ ← θ − lr·∇θ.
    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            w.scaled_add(-learning_rate, g);
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            b.scaled_add(-learning_rate, g);
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_json(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let net: DenseNetwork = load_json(path)?;
        net.validate()?;
        Ok(net)
    }
}

pub(crate) fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(BufWriter::new(file), value).map_err(|e| Error::io(path, std::io::Error::other(e)))
}

pub(crate) fn load_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

/// Mean softmax cross-entropy over the batch, computed from logits, and its
/// gradient w.r.t. the logits: `(softmax(z) − onehot) / batch`.
pub fn softmax_cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    let batch = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for ((row, mut g), &t) in logits.rows().into_iter().zip(grad.rows_mut()).zip(targets) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + sum.ln();
        loss -= row[t] - log_norm;
        Zip::from(&mut g)
            .and(&row)
            .for_each(|g, &z| *g = (z - log_norm).exp() / batch);
        g[t] -= 1.0 / batch;
    }
    (loss / batch, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Index batches for one epoch.
pub fn epoch_batches(n: usize, batch_size: usize, shuffle: bool, rng: &mut StreamRng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    if shuffle {
        idx.shuffle(rng);
    }
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

pub(crate) fn gather_rows(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    x.select(Axis(0), rows)
}

/// Mini-batch SGD on mean softmax cross-entropy. Returns the per-epoch mean
/// training loss. Zero epochs leaves the network untouched.
pub fn train_classifier(
    net: &mut DenseNetwork,
    inputs: &Array2<f64>,
    targets: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if inputs.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if inputs.nrows() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.nrows(),
            got: targets.len(),
        });
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= net.output_dim()) {
        return Err(Error::DimensionMismatch {
            expected: net.output_dim(),
            got: t + 1,
        });
    }
    let mut order_rng = stream(cfg.seed, "shuffle", 0);
    let mut dropout_rng = stream(cfg.seed, "dropout", 0);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in epoch_batches(inputs.nrows(), cfg.batch_size, cfg.shuffle, &mut order_rng) {
            let x = gather_rows(inputs, &batch);
            let t: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let cache = net.forward(x.view(), true, &mut dropout_rng)?;
            let (loss, grad) = softmax_cross_entropy(cache.logits(), &t);
            if !loss.is_finite() {
                trace.push(loss);
                return Err(Error::Divergence { epoch, trace });
            }
            total += loss * batch.len() as f64;
            let (grads, _) = net.backward(&cache, OutputGrad::PreActivation(grad))?;
            if net.sgd_step(&grads, cfg.learning_rate).is_err() {
                trace.push(f64::NAN);
                return Err(Error::Divergence { epoch, trace });
            }
        }
        trace.push(total / inputs.nrows() as f64);
    }
    Ok(trace)
}
