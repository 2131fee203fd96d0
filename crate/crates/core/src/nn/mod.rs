//! Fully-connected network substrate.
//!
//! Every learning component in the crate (the adversarial autoencoder, the
//! actors and the critics) is an [`MlpNetwork`]: a chain of dense layers
//! `y = act(W x + b)` operating on row-major minibatches. Backpropagation is
//! exact reverse mode; the only optimizer is plain SGD, and target networks
//! track their sources through [`soft_update`].
//!
//! Networks carry a private mutation stamp. A [`ForwardCache`] remembers the
//! stamp of the network that produced it, so backpropagating a stale cache
//! through a network whose parameters have since changed is reported instead
//! of silently producing wrong gradients.

mod blob;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use blob::{deserialize_params, serialize_params, ParamBlob, ParamTensor};

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One dense layer. `weights` is `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub(crate) weights: Array2<f64>,
    pub(crate) bias: Array1<f64>,
    pub(crate) activation: Activation,
}

impl Dense {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.nrows() {
            return Err(Error::Shape(format!(
                "bias length {} does not match {} weight rows",
                bias.len(),
                weights.nrows()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("layer parameters must be finite".into()));
        }
        Ok(Dense {
            weights,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn bias(&self) -> ArrayView1<'_, f64> {
        self.bias.view()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Weights followed by bias, flattened.
    pub fn flat_params(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().chain(self.bias.iter()).copied()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// A chain of dense layers.
#[derive(Debug, Clone)]
pub struct MlpNetwork {
    layers: Vec<Dense>,
    stamp: u64,
}

impl PartialEq for MlpNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Per-layer activations recorded by a forward pass; `activations[0]` is the
/// input and `activations[l + 1]` is the output of layer `l`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: u64,
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> ArrayView2<'_, f64> {
        self.activations
            .last()
            .expect("cache always holds the input")
            .view()
    }

    pub fn input(&self) -> ArrayView2<'_, f64> {
        self.activations[0].view()
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.activations.pop().expect("cache always holds the input")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradients for every parameter of a network, mirroring its layer shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(g.bias.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(g.bias.iter()))
            .all(|&v| v == 0.0)
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weights *= factor;
            g.bias *= factor;
        }
    }

    /// Flattened in the same order as [`MlpNetwork::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
}

impl OptimizerConfig {
    pub fn new(learning_rate: f64) -> Result<Self> {
        let cfg = OptimizerConfig { learning_rate };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!(
                "learning rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.01,
        }
    }
}

impl MlpNetwork {
    /// Builds a network with weights drawn uniformly from
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` and zero biases.
    ///
    /// `layer_dims` lists every width including the input, so a network with
    /// `n` layers takes `n + 1` dims and `n` activations.
    pub fn new(layer_dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Config(
                "a network needs at least an input and an output dimension".into(),
            ));
        }
        if activations.len() != layer_dims.len() - 1 {
            return Err(Error::Config(format!(
                "{} layers need {} activations, got {}",
                layer_dims.len() - 1,
                layer_dims.len() - 1,
                activations.len()
            )));
        }
        if let Some(pos) = layer_dims.iter().position(|&d| d == 0) {
            return Err(Error::Config(format!("layer dimension {pos} is zero")));
        }
        let mut rng = seed::rng(seed);
        let layers = layer_dims
            .windows(2)
            .zip(activations)
            .map(|(dims, &activation)| {
                let (fan_in, fan_out) = (dims[0], dims[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..=bound));
                Dense {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(MlpNetwork {
            layers,
            stamp: fresh_stamp(),
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].output_dim(),
                    i + 1,
                    pair[1].input_dim()
                )));
            }
        }
        Ok(MlpNetwork {
            layers,
            stamp: fresh_stamp(),
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable access to the layers; invalidates outstanding forward caches.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.stamp = fresh_stamp();
        &mut self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(Dense::flat_params).collect()
    }

    /// Overwrites every parameter from a flat slice in [`Self::flat_params`] order.
    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        for layer in self.layers_mut() {
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *w = it.next().expect("length checked above");
            }
        }
        Ok(())
    }

    /// Dims and activations agree layer by layer.
    pub fn same_architecture(&self, other: &MlpNetwork) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.dim() == b.weights.dim() && a.activation == b.activation
            })
    }

    pub(crate) fn check_same_architecture(&self, other: &MlpNetwork) -> Result<()> {
        if self.same_architecture(other) {
            Ok(())
        } else {
            Err(Error::Shape("networks have different architectures".into()))
        }
    }

    /// Single-vector forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let batch = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let cache = self.forward_batch(batch)?;
        let out = cache.output().row(0).to_vec();
        Ok((out, cache))
    }

    /// Forward pass over a `[batch, in]` matrix, keeping every activation.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        self.check_input(x.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        for layer in &self.layers {
            let next = affine(layer, activations.last().unwrap().view());
            activations.push(next);
        }
        Ok(ForwardCache {
            stamp: self.stamp,
            activations,
        })
    }

    /// Forward pass that keeps only the output.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut current = affine(&self.layers[0], x);
        for layer in &self.layers[1..] {
            current = affine(layer, current.view());
        }
        Ok(current)
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects inputs of width {}, got {}",
                self.input_dim(),
                width
            )));
        }
        Ok(())
    }

    fn check_cache(&self, cache: &ForwardCache, output_grad: ArrayView2<'_, f64>) -> Result<()> {
        if cache.stamp != self.stamp || cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::Contract(
                "forward cache was not produced by this network's current parameters".into(),
            ));
        }
        if output_grad.dim() != cache.output().dim() {
            return Err(Error::Shape(format!(
                "output gradient is {:?} but the forward output is {:?}",
                output_grad.dim(),
                cache.output().dim()
            )));
        }
        Ok(())
    }

    /// Reverse-mode gradients of `sum(output_grad .* output)` with respect to
    /// every parameter, plus the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<'_, f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        self.check_cache(cache, output_grad)?;
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut upstream = output_grad.to_owned();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let delta = local_delta(layer.activation, cache.activations[l + 1].view(), upstream);
            let mut dw = Array2::zeros(layer.weights.raw_dim());
            general_mat_mul(1.0, &delta.t(), &cache.activations[l], 0.0, &mut dw);
            let db = delta.sum_axis(Axis(0));
            let mut dx = Array2::zeros((delta.nrows(), layer.input_dim()));
            general_mat_mul(1.0, &delta, &layer.weights, 0.0, &mut dx);
            upstream = dx;
            grads.push(LayerGradient {
                weights: dw,
                bias: db,
            });
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, upstream))
    }

    /// Gradient with respect to the input only; skips parameter gradients.
    pub fn input_gradient(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        self.check_cache(cache, output_grad)?;
        let mut upstream = output_grad.to_owned();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let delta = local_delta(layer.activation, cache.activations[l + 1].view(), upstream);
            let mut dx = Array2::zeros((delta.nrows(), layer.input_dim()));
            general_mat_mul(1.0, &delta, &layer.weights, 0.0, &mut dx);
            upstream = dx;
        }
        Ok(upstream)
    }
}

fn affine(layer: &Dense, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut z = Array2::zeros((x.nrows(), layer.output_dim()));
    general_mat_mul(1.0, &x, &layer.weights.t(), 0.0, &mut z);
    let act = layer.activation;
    for mut row in z.rows_mut() {
        Zip::from(&mut row)
            .and(&layer.bias)
            .for_each(|v, &b| *v = act.apply(*v + b));
    }
    z
}

fn local_delta(act: Activation, output: ArrayView2<'_, f64>, mut upstream: Array2<f64>) -> Array2<f64> {
    if act != Activation::Identity {
        Zip::from(&mut upstream)
            .and(&output)
            .for_each(|g, &y| *g *= act.derivative_at_output(y));
    }
    upstream
}

/// `p <- p - lr * g` for every parameter. Gradients are checked for finiteness
/// before anything is modified.
pub fn sgd_step(net: &mut MlpNetwork, grads: &Gradients, cfg: &OptimizerConfig) -> Result<()> {
    if grads.layers.len() != net.layers.len() {
        return Err(Error::Shape(format!(
            "gradient has {} layers, network has {}",
            grads.layers.len(),
            net.layers.len()
        )));
    }
    for (i, (g, l)) in grads.layers.iter().zip(&net.layers).enumerate() {
        if g.weights.dim() != l.weights.dim() || g.bias.len() != l.bias.len() {
            return Err(Error::Shape(format!("gradient shape mismatch in layer {i}")));
        }
        if g.weights.iter().chain(g.bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: i,
                what: "gradient".into(),
            });
        }
    }
    let lr = cfg.learning_rate;
    for (g, l) in grads.layers.iter().zip(net.layers_mut()) {
        l.weights.scaled_add(-lr, &g.weights);
        l.bias.scaled_add(-lr, &g.bias);
    }
    Ok(())
}

/// `target <- tau * source + (1 - tau) * target`, element-wise.
pub fn soft_update(target: &mut MlpNetwork, source: &MlpNetwork, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1], got {tau}")));
    }
    target.check_same_architecture(source)?;
    for (t, s) in target.layers_mut().iter_mut().zip(&source.layers) {
        blend_into(&mut t.weights, &s.weights, tau);
        blend_into(&mut t.bias, &s.bias, tau);
    }
    Ok(())
}

/// Convex blend `t <- t + w (s - t)`, clamped to the segment between the two
/// endpoints so rounding never leaves it.
pub(crate) fn blend_into<D: ndarray::Dimension>(
    target: &mut ndarray::Array<f64, D>,
    source: &ndarray::Array<f64, D>,
    weight: f64,
) {
    if weight == 1.0 {
        target.assign(source);
        return;
    }
    if weight == 0.0 {
        return;
    }
    Zip::from(target).and(source).for_each(|t, &s| {
        let v = *t + weight * (s - *t);
        *t = if s >= *t { v.clamp(*t, s) } else { v.clamp(s, *t) };
    });
}

#[cfg(test)]
mod tests;
