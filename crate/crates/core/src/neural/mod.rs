//! Small fully connected networks with hand-derived reverse-mode gradients.
//!
//! Batches are row-major `(samples, features)` matrices. Every gradient is
//! of `Σ_rows ⟨output_row, g_row⟩`, so callers fold any batch averaging
//! into `g`.

mod adam;
mod checkpoint;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

pub use adam::{apply_update, OptimizerState};
pub use checkpoint::{AdamRecord, MlpRecord};

use crate::error::{input_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Tanh {
            z.mapv_inplace(f64::tanh);
        }
    }

    /// Multiplies `delta` by the derivative, expressed through the output.
    fn backprop(self, delta: &mut Array2<f64>, out: &Array2<f64>) {
        if self == Activation::Tanh {
            Zip::from(delta).and(out).for_each(|d, &y| *d *= 1.0 - y * y);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `(out, in)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
    hidden: Activation,
    output: Activation,
}

/// Per-layer inputs and outputs recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    inputs: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl Cache {
    pub fn output(&self) -> &Array2<f64> {
        self.outputs.last().expect("cache of a network with at least one layer")
    }
}

/// Gradients with the same layout as the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer { weight: Array2::zeros(l.weight.raw_dim()), bias: Array1::zeros(l.bias.len()) })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().chain(l.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales to global L2 norm `max_norm` if larger.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n.is_finite() {
            self.scale(max_norm / n);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied()).collect()
    }
}

impl Mlp {
    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn new<R: Rng + ?Sized>(layer_dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, hidden, output)?;
        for l in &mut net.layers {
            let bound = 1.0 / (l.weight.ncols() as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            l.weight.mapv_inplace(|_| dist.sample(rng));
            l.bias.mapv_inplace(|_| dist.sample(rng));
        }
        Ok(net)
    }

    pub fn zeros(layer_dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
            return input_err(format!("layer dims {layer_dims:?} need at least two positive entries"));
        }
        let layers = layer_dims
            .windows(2)
            .map(|w| Layer { weight: Array2::zeros((w[1], w[0])), bias: Array1::zeros(w[1]) })
            .collect();
        Ok(Self { layer_dims: layer_dims.to_vec(), layers, hidden, output })
    }

    pub fn from_layers(layers: Vec<Layer>, hidden: Activation, output: Activation) -> Result<Self> {
        if layers.is_empty() {
            return input_err("network needs at least one layer");
        }
        let mut dims = vec![layers[0].weight.ncols()];
        for l in &layers {
            if l.weight.ncols() != *dims.last().unwrap() || l.bias.len() != l.weight.nrows() {
                return input_err("incompatible consecutive layer shapes");
            }
            dims.push(l.weight.nrows());
        }
        Ok(Self { layer_dims: dims, layers, hidden, output })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activations(&self) -> (Activation, Activation) {
        (self.hidden, self.output)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.layer_dims == other.layer_dims && self.hidden == other.hidden && self.output == other.output
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied()).collect()
    }

    pub fn set_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return input_err(format!("expected {} parameters, got {}", self.parameter_count(), params.len()));
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return input_err(format!("network expects {} inputs, got {cols}", self.input_dim()));
        }
        Ok(())
    }

    /// Batched forward pass keeping what backward needs.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Cache)> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.weight.t()) + &l.bias;
            self.activation_of(k).apply(&mut z);
            inputs.push(a);
            a = z;
            outputs.push(a.clone());
        }
        Ok((a, Cache { inputs, outputs }))
    }

    /// Batched forward pass without a cache.
    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut a = x.to_owned();
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.weight.t()) + &l.bias;
            self.activation_of(k).apply(&mut z);
            a = z;
        }
        Ok(a)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Cache)> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        let (y, cache) = self.forward_batch(view)?;
        Ok((y.into_raw_vec_and_offset().0, cache))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        Ok(self.predict_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// Reverse pass for `Σ_rows ⟨y_row, g_row⟩`: returns parameter gradients
    /// and the gradient with respect to the input batch.
    pub fn backward(&self, cache: &Cache, output_grad: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        if cache.inputs.len() != self.layers.len() {
            return input_err("cache was produced by a different architecture");
        }
        let out = cache.output();
        if output_grad.dim() != out.dim() {
            return input_err(format!("output gradient shape {:?} does not match output {:?}", output_grad.dim(), out.dim()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = output_grad.to_owned();
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            if cache.inputs[k].ncols() != l.weight.ncols() {
                return input_err("cache was produced by a different architecture");
            }
            self.activation_of(k).backprop(&mut delta, &cache.outputs[k]);
            let dw = delta.t().dot(&cache.inputs[k]);
            let db = delta.sum_axis(Axis(0));
            delta = delta.dot(&l.weight);
            grads.push(Layer { weight: dw, bias: db });
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// Euclidean distance between the parameter vectors of two networks.
    pub fn distance(&self, other: &Mlp) -> Result<f64> {
        if !self.same_architecture(other) {
            return input_err("networks have different architectures");
        }
        Ok(self
            .flatten()
            .iter()
            .zip(other.flatten())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt())
    }
}

/// `target ← τ·online + (1 − τ)·target`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !target.same_architecture(online) {
        return input_err("soft update between different architectures");
    }
    if !(0.0..=1.0).contains(&tau) {
        return input_err(format!("tau must lie in [0,1], got {tau}"));
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        Zip::from(&mut t.weight).and(&o.weight).for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
        Zip::from(&mut t.bias).and(&o.bias).for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
    }
    Ok(())
}
