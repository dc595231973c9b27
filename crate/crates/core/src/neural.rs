//! Dense numeric core: row-major matrices, a tanh multilayer perceptron with
//! a linear output layer, softmax, analytic gradients and flat parameter
//! vectors.
//!
//! Parameters are flattened layer by layer: the weight matrix of a layer in
//! row-major order (`out x in`), followed by its bias vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::losses::{self, ClassDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(FedError::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(FedError::Domain("matrix entries must be finite".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Stacks equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(FedError::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    if out.cols == 0 {
        return out;
    }
    for row in out.data.chunks_exact_mut(out.cols) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Flat model parameters together with the layer layout they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layer_sizes: Vec<usize>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layer_sizes: Vec<usize>) -> Result<Self> {
        validate_layer_sizes(&layer_sizes)?;
        let expected = param_count(&layer_sizes);
        if values.len() != expected {
            return Err(FedError::Shape(format!(
                "layer sizes {layer_sizes:?} need {expected} parameters, got {}",
                values.len()
            )));
        }
        Ok(ParamVector {
            values,
            layer_sizes,
        })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        ParamVector::new(vec![0.0; param_count(layer_sizes)], layer_sizes.to_vec())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn check_same_shape(&self, other: &ParamVector) -> Result<()> {
        if self.layer_sizes != other.layer_sizes {
            return Err(FedError::Shape(format!(
                "parameter layouts differ: {:?} vs {:?}",
                self.layer_sizes, other.layer_sizes
            )));
        }
        Ok(())
    }
}

/// Total number of weights and biases for a layer layout.
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

pub(crate) fn validate_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(FedError::Config(format!(
            "a model needs at least an input and an output layer, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(FedError::Config(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Dense {
    /// `out x in`
    weights: Matrix,
    bias: Vec<f64>,
}

/// Multilayer perceptron classifier. Hidden layers use tanh; the last layer
/// produces raw logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    layers: Vec<Dense>,
}

/// Per-layer activations of one forward pass, kept for backpropagation.
/// `activations[0]` is the input batch and the last entry holds the logits.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub activations: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Matrix {
        self.activations.last().expect("trace holds at least the input")
    }
}

/// Result of [`Mlp::loss_and_grads_detailed`].
#[derive(Debug, Clone)]
pub struct LossAndGrads {
    /// Mean smoothed cross-entropy over the batch.
    pub loss: f64,
    pub grads: ParamVector,
    /// Softmax output, one row per sample.
    pub probs: Matrix,
}

impl Mlp {
    /// Glorot-style uniform init: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-a..=a))
                    .collect();
                Dense {
                    weights: Matrix {
                        rows: fan_out,
                        cols: fan_in,
                        data,
                    },
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            layers,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().expect("validated layout")
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        let mut trace = self.forward_trace(batch)?;
        Ok(trace.activations.pop().expect("non-empty trace"))
    }

    pub fn forward_trace(&self, batch: &Matrix) -> Result<ForwardTrace> {
        if batch.cols != self.input_dim() {
            return Err(FedError::Shape(format!(
                "batch has {} features, model expects {}",
                batch.cols,
                self.input_dim()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.clone());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let input = &activations[l];
            let mut out = affine(input, &layer.weights, &layer.bias);
            if l != last {
                out.data.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(out);
        }
        Ok(ForwardTrace { activations })
    }

    /// Mean smoothed cross-entropy of the batch against `targets` and its
    /// gradient with respect to every parameter.
    pub fn loss_and_grads(
        &self,
        batch: &Matrix,
        targets: &[ClassDistribution],
    ) -> Result<(f64, ParamVector)> {
        let out = self.loss_and_grads_detailed(batch, targets)?;
        Ok((out.loss, out.grads))
    }

    pub fn loss_and_grads_detailed(
        &self,
        batch: &Matrix,
        targets: &[ClassDistribution],
    ) -> Result<LossAndGrads> {
        if targets.len() != batch.rows {
            return Err(FedError::Shape(format!(
                "{} targets for a batch of {} samples",
                targets.len(),
                batch.rows
            )));
        }
        let m = self.class_count();
        if let Some(t) = targets.iter().find(|t| t.class_count() != m) {
            return Err(FedError::Shape(format!(
                "target over {} classes, model has {m}",
                t.class_count()
            )));
        }
        let trace = self.forward_trace(batch)?;
        let probs = softmax(trace.logits());
        let n = batch.rows as f64;

        let mut loss = 0.0;
        for (p, t) in probs.iter_rows().zip(targets) {
            loss += losses::cross_entropy(p, t.as_slice())?;
        }
        loss /= n;

        // dL/dlogits = (p - y') / n for the batch mean
        let mut delta = probs.clone();
        for (row, t) in delta.data.chunks_exact_mut(m).zip(targets) {
            for (d, y) in row.iter_mut().zip(t.as_slice()) {
                *d = (*d - y) / n;
            }
        }

        let mut layer_grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.activations[l];
            let (out_dim, in_dim) = (layer.weights.rows, layer.weights.cols);
            let mut gw = vec![0.0; out_dim * in_dim];
            let mut gb = vec![0.0; out_dim];
            for s in 0..delta.rows {
                let d = delta.row(s);
                let x = input.row(s);
                for o in 0..out_dim {
                    gb[o] += d[o];
                    let row = &mut gw[o * in_dim..(o + 1) * in_dim];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += d[o] * xi;
                    }
                }
            }
            if l > 0 {
                // back through W, then through tanh of the previous layer
                let mut prev = Matrix::zeros(delta.rows, in_dim);
                for s in 0..delta.rows {
                    let d = delta.row(s);
                    let a = input.row(s);
                    let out = &mut prev.data[s * in_dim..(s + 1) * in_dim];
                    for o in 0..out_dim {
                        let w = layer.weights.row(o);
                        for (acc, wi) in out.iter_mut().zip(w) {
                            *acc += d[o] * wi;
                        }
                    }
                    for (acc, ai) in out.iter_mut().zip(a) {
                        *acc *= 1.0 - ai * ai;
                    }
                }
                delta = prev;
            }
            layer_grads.push((gw, gb));
        }
        layer_grads.reverse();

        let mut flat = Vec::with_capacity(param_count(&self.layer_sizes));
        for (gw, gb) in layer_grads {
            flat.extend(gw);
            flat.extend(gb);
        }
        Ok(LossAndGrads {
            loss,
            grads: ParamVector {
                values: flat,
                layer_sizes: self.layer_sizes.clone(),
            },
            probs,
        })
    }

    pub fn to_params(&self) -> ParamVector {
        let mut values = Vec::with_capacity(param_count(&self.layer_sizes));
        for layer in &self.layers {
            values.extend_from_slice(&layer.weights.data);
            values.extend_from_slice(&layer.bias);
        }
        ParamVector {
            values,
            layer_sizes: self.layer_sizes.clone(),
        }
    }

    pub fn from_params(params: &ParamVector) -> Result<Self> {
        Mlp::from_slice(params.values(), params.layer_sizes())
    }

    /// Rebuilds a model from raw values laid out as by [`Mlp::to_params`].
    pub fn from_slice(values: &[f64], layer_sizes: &[usize]) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        let expected = param_count(layer_sizes);
        if values.len() != expected {
            return Err(FedError::Shape(format!(
                "layer sizes {layer_sizes:?} need {expected} parameters, got {}",
                values.len()
            )));
        }
        let mut offset = 0;
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let wn = fan_in * fan_out;
                let weights = Matrix {
                    rows: fan_out,
                    cols: fan_in,
                    data: values[offset..offset + wn].to_vec(),
                };
                let bias = values[offset + wn..offset + wn + fan_out].to_vec();
                offset += wn + fan_out;
                Dense { weights, bias }
            })
            .collect();
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            layers,
        })
    }

    /// Index of the largest logit per row; ties go to the lowest class.
    pub fn predict(&self, batch: &Matrix) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        Ok(logits.iter_rows().map(argmax).collect())
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// `input * W^T + b` for a batch of row vectors.
fn affine(input: &Matrix, weights: &Matrix, bias: &[f64]) -> Matrix {
    let (n, out_dim) = (input.rows, weights.rows);
    let mut out = Matrix::zeros(n, out_dim);
    for s in 0..n {
        let x = input.row(s);
        for o in 0..out_dim {
            let w = weights.row(o);
            let mut acc = bias[o];
            for (wi, xi) in w.iter().zip(x) {
                acc += wi * xi;
            }
            out.data[s * out_dim + o] = acc;
        }
    }
    out
}

/// Free-function forms of the model operations.
pub fn init_model(layer_sizes: &[usize], seed: u64) -> Result<Mlp> {
    Mlp::init(layer_sizes, seed)
}

pub fn forward(model: &Mlp, batch: &Matrix) -> Result<Matrix> {
    model.forward(batch)
}

pub fn loss_and_grads(
    model: &Mlp,
    batch: &Matrix,
    targets: &[ClassDistribution],
) -> Result<(f64, ParamVector)> {
    model.loss_and_grads(batch, targets)
}

pub fn params_to_vec(model: &Mlp) -> ParamVector {
    model.to_params()
}

pub fn vec_to_params(values: &[f64], layer_sizes: &[usize]) -> Result<Mlp> {
    Mlp::from_slice(values, layer_sizes)
}
