use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, Gradients, Layer, Mlp, OptimizerState};
use crate::error::{input_err, Result};

/// JSON form of an [`Mlp`]: row-major `(out, in)` weights per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRecord {
    pub layer_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

/// JSON form of an [`OptimizerState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamRecord {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: MlpRecord,
    pub v: MlpRecord,
}

fn layers_record(dims: &[usize], layers: &[Layer], hidden: Activation, output: Activation) -> MlpRecord {
    MlpRecord {
        layer_dims: dims.to_vec(),
        hidden_activation: hidden,
        output_activation: output,
        weights: layers.iter().map(|l| l.weight.iter().copied().collect()).collect(),
        biases: layers.iter().map(|l| l.bias.to_vec()).collect(),
    }
}

impl From<&Mlp> for MlpRecord {
    fn from(net: &Mlp) -> Self {
        layers_record(&net.layer_dims, &net.layers, net.hidden, net.output)
    }
}

impl MlpRecord {
    fn layers(&self) -> Result<Vec<Layer>> {
        let dims = &self.layer_dims;
        if dims.len() < 2 || self.weights.len() != dims.len() - 1 || self.biases.len() != dims.len() - 1 {
            return input_err("checkpoint layer count does not match layer_dims");
        }
        dims.windows(2)
            .zip(self.weights.iter().zip(&self.biases))
            .map(|(w, (weights, bias))| {
                let weight = Array2::from_shape_vec((w[1], w[0]), weights.clone())
                    .map_err(|_| crate::Error::Input(format!("weight array does not fit {}x{}", w[1], w[0])))?;
                if bias.len() != w[1] {
                    return input_err(format!("bias has {} entries, expected {}", bias.len(), w[1]));
                }
                Ok(Layer { weight, bias: Array1::from(bias.clone()) })
            })
            .collect()
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        Mlp::from_layers(self.layers()?, self.hidden_activation, self.output_activation)
    }
}

impl From<&OptimizerState> for AdamRecord {
    fn from(o: &OptimizerState) -> Self {
        let dims: Vec<usize> = std::iter::once(o.m.layers[0].weight.ncols())
            .chain(o.m.layers.iter().map(|l| l.weight.nrows()))
            .collect();
        Self {
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            step: o.step,
            m: layers_record(&dims, &o.m.layers, Activation::Identity, Activation::Identity),
            v: layers_record(&dims, &o.v.layers, Activation::Identity, Activation::Identity),
        }
    }
}

impl AdamRecord {
    pub fn to_state(&self) -> Result<OptimizerState> {
        Ok(OptimizerState {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            step: self.step,
            m: Gradients { layers: self.m.layers()? },
            v: Gradients { layers: self.v.layers()? },
        })
    }
}
