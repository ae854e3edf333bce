//! Fully connected classifier over a flat parameter vector.
//!
//! Layer `l` maps `sizes[l]` inputs to `sizes[l+1]` outputs. Its parameters
//! are stored as the row-major weight matrix (`out × in`) followed by the
//! bias vector, and layers are laid out back to back. Hidden layers apply the
//! activation; the last layer emits raw logits scored with softmax
//! cross-entropy.

mod checkpoint;
mod optim;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerKind, OptimizerState, Schedule};

use std::ops::{Deref, DerefMut};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "model needs at least two positive layer sizes, got {layer_sizes:?}"
            )));
        }
        Ok(Self {
            layer_sizes,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// `(weight_offset, bias_offset, fan_in, fan_out)` per layer.
    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        self.layer_sizes.windows(2).scan(0, |offset, w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = *offset;
            let bias = weights + fan_in * fan_out;
            *offset = bias + fan_out;
            Some((weights, bias, fan_in, fan_out))
        })
    }

    fn check(&self, params: &ParamVector, ds: &Dataset) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector has {} entries, model needs {}",
                params.len(),
                self.param_count()
            )));
        }
        if ds.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "dataset dim {} but model input is {}",
                ds.dim(),
                self.input_dim()
            )));
        }
        if ds.num_classes() > self.num_classes() {
            return Err(Error::DimensionMismatch(format!(
                "dataset has {} classes but model outputs {}",
                ds.num_classes(),
                self.num_classes()
            )));
        }
        Ok(())
    }
}

/// Flat model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<ParamVector> for ParamVector {
    fn as_ref(&self) -> &ParamVector {
        self
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Weights uniform in `±1/√fan_in`, biases zero.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = stream_rng(Stream::Init, &[seed]);
    let mut params = ParamVector::zeros(spec.param_count());
    for (w, _, fan_in, fan_out) in spec.layers() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in &mut params[w..w + fan_in * fan_out] {
            *v = rng.random_range(-bound..bound);
        }
    }
    params
}

/// Per-sample forward/backward workspace.
struct Workspace {
    /// Activations per layer, `acts[0]` is the input.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(spec: &ModelSpec) -> Self {
        Self {
            acts: spec.layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: spec.layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn forward(&mut self, spec: &ModelSpec, params: &[f64], x: &[f64]) {
        self.acts[0].copy_from_slice(x);
        let last = spec.layer_sizes.len() - 2;
        for (l, (w, b, fan_in, fan_out)) in spec.layers().enumerate() {
            let (head, tail) = self.acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            for o in 0..fan_out {
                let row = &params[w + o * fan_in..w + (o + 1) * fan_in];
                let z = params[b + o] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>();
                out[o] = if l == last {
                    z
                } else {
                    spec.activation.apply(z)
                };
            }
        }
    }

    fn logits(&self) -> &[f64] {
        self.acts.last().expect("at least two layers")
    }

    /// Cross-entropy of the current logits against `label`, stabilized with
    /// log-sum-exp. Leaves `softmax - onehot` in the output delta.
    fn loss_and_output_delta(&mut self, label: usize) -> f64 {
        let logits = self.acts.last().expect("at least two layers");
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        let delta = self.deltas.last_mut().expect("at least two layers");
        for (d, z) in delta.iter_mut().zip(logits) {
            *d = (z - log_z).exp();
        }
        delta[label] -= 1.0;
        log_z - logits[label]
    }

    /// Accumulates `d loss / d params` for the current sample into `grad`.
    fn backward(&mut self, spec: &ModelSpec, params: &[f64], grad: &mut [f64]) {
        let layers: Vec<_> = spec.layers().collect();
        for (l, &(w, b, fan_in, fan_out)) in layers.iter().enumerate().rev() {
            let (dh, dt) = self.deltas.split_at_mut(l + 1);
            let delta_out = &dt[0];
            let input = &self.acts[l];
            for o in 0..fan_out {
                let d = delta_out[o];
                if d == 0.0 {
                    continue;
                }
                grad[b + o] += d;
                let g_row = &mut grad[w + o * fan_in..w + (o + 1) * fan_in];
                for (g, a) in g_row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if l > 0 {
                let delta_in = &mut dh[l];
                delta_in.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..fan_out {
                    let d = delta_out[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &params[w + o * fan_in..w + (o + 1) * fan_in];
                    for (di, p) in delta_in.iter_mut().zip(row) {
                        *di += d * p;
                    }
                }
                for (di, a) in delta_in.iter_mut().zip(input) {
                    *di *= spec.activation.derivative_from_output(*a);
                }
            }
        }
    }
}

/// Mean cross-entropy and, optionally, its gradient over the listed samples.
pub(crate) fn evaluate_rows(
    params: &ParamVector,
    spec: &ModelSpec,
    ds: &Dataset,
    rows: &[usize],
    grad: Option<&mut ParamVector>,
) -> Result<f64> {
    spec.check(params, ds)?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset("loss"));
    }
    let mut ws = Workspace::new(spec);
    let mut total = 0.0;
    match grad {
        Some(g) => {
            if g.len() != params.len() {
                return Err(Error::DimensionMismatch("gradient buffer length".into()));
            }
            g.iter_mut().for_each(|v| *v = 0.0);
            for &i in rows {
                let (x, y) = ds.sample(i);
                ws.forward(spec, params, x);
                total += ws.loss_and_output_delta(y);
                ws.backward(spec, params, g);
            }
            let scale = 1.0 / rows.len() as f64;
            g.iter_mut().for_each(|v| *v *= scale);
        }
        None => {
            for &i in rows {
                let (x, y) = ds.sample(i);
                ws.forward(spec, params, x);
                total += ws.loss_and_output_delta(y);
            }
        }
    }
    Ok(total / rows.len() as f64)
}

fn all_rows(ds: &Dataset) -> Vec<usize> {
    (0..ds.len()).collect()
}

/// Mean softmax cross-entropy over `batch`.
pub fn loss(params: &ParamVector, spec: &ModelSpec, batch: &Dataset) -> Result<f64> {
    evaluate_rows(params, spec, batch, &all_rows(batch), None)
}

/// Exact gradient of [`loss`] by backpropagation.
pub fn gradient(params: &ParamVector, spec: &ModelSpec, batch: &Dataset) -> Result<ParamVector> {
    let mut g = ParamVector::zeros(params.len());
    evaluate_rows(params, spec, batch, &all_rows(batch), Some(&mut g))?;
    Ok(g)
}

pub fn loss_and_gradient(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &Dataset,
) -> Result<(f64, ParamVector)> {
    let mut g = ParamVector::zeros(params.len());
    let l = evaluate_rows(params, spec, batch, &all_rows(batch), Some(&mut g))?;
    Ok((l, g))
}

/// Raw output logits for one input.
pub fn logits(params: &ParamVector, spec: &ModelSpec, x: &[f64]) -> Vec<f64> {
    let mut ws = Workspace::new(spec);
    ws.forward(spec, params, x);
    ws.logits().to_vec()
}

/// Fraction of samples whose argmax logit (lowest index on ties) equals the label.
pub fn accuracy(params: &ParamVector, spec: &ModelSpec, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("accuracy"));
    }
    spec.check(params, ds)?;
    let mut ws = Workspace::new(spec);
    let mut correct = 0usize;
    for i in 0..ds.len() {
        let (x, y) = ds.sample(i);
        ws.forward(spec, params, x);
        let pred = ws
            .logits()
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &z)| {
                if z > best.1 {
                    (k, z)
                } else {
                    best
                }
            })
            .0;
        correct += usize::from(pred == y);
    }
    Ok(correct as f64 / ds.len() as f64)
}
