use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::{ParamTape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    fn record(self, g: &mut Graph, v: Var) -> Var {
        match self {
            Activation::Linear => v,
            Activation::Tanh => g.tanh(v),
            Activation::Relu => g.relu(v),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Layer stack of a fully connected network. Each layer owns a weight
/// `out_dim x in_dim` and a bias of length `out_dim`, stored in that order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layers: Vec<Layer>,
}

impl MlpSpec {
    /// `widths = [input, hidden.., output]`; hidden layers use `hidden_act`,
    /// the last layer is linear.
    pub fn chain(widths: &[usize], hidden_act: Activation) -> Self {
        let n = widths.len().saturating_sub(1);
        let layers = (0..n)
            .map(|i| Layer {
                in_dim: widths[i],
                out_dim: widths[i + 1],
                activation: if i + 1 == n { Activation::Linear } else { hidden_act },
            })
            .collect();
        MlpSpec { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn num_tensors(&self) -> usize {
        2 * self.layers.len()
    }

    /// Glorot-uniform weights, zero biases, appended to `tape` under `prefix`.
    pub fn init_into<R: Rng>(&self, tape: &mut ParamTape, prefix: &str, rng: &mut R) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            let bound = (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
            let w = (0..l.in_dim * l.out_dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            tape.push(format!("{prefix}.layer{i}.weight"), Tensor::matrix(l.out_dim, l.in_dim, w)?)?;
            tape.push(format!("{prefix}.layer{i}.bias"), Tensor::vector(vec![0.0; l.out_dim]))?;
        }
        Ok(())
    }

    fn check_params(&self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.num_tensors() {
            return Err(Error::shape("mlp parameter count", self.num_tensors(), params.len()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if params[2 * i].shape() != [l.out_dim, l.in_dim] {
                return Err(Error::shape(
                    format!("layer {i} weight"),
                    format!("[{}, {}]", l.out_dim, l.in_dim),
                    format!("{:?}", params[2 * i].shape()),
                ));
            }
            if params[2 * i + 1].len() != l.out_dim {
                return Err(Error::shape(format!("layer {i} bias"), l.out_dim, params[2 * i + 1].len()));
            }
            if i > 0 && self.layers[i - 1].out_dim != l.in_dim {
                return Err(Error::shape(format!("layer {i} input"), self.layers[i - 1].out_dim, l.in_dim));
            }
        }
        Ok(())
    }
}

/// Evaluates the network on one input vector without recording a graph.
pub fn mlp_forward(params: &[Tensor], input: &[f64], spec: &MlpSpec) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    let mut h = input.to_vec();
    for (i, l) in spec.layers.iter().enumerate() {
        if h.len() != l.in_dim {
            return Err(Error::shape(format!("input to layer {i}"), l.in_dim, h.len()));
        }
        let (w, b) = (params[2 * i].data(), params[2 * i + 1].data());
        h = (0..l.out_dim)
            .map(|o| {
                let row = &w[o * l.in_dim..(o + 1) * l.in_dim];
                let pre = b[o] + row.iter().zip(&h).map(|(a, x)| a * x).sum::<f64>();
                l.activation.apply(pre)
            })
            .collect();
    }
    Ok(h)
}

/// Records the network on `g`. `params` are graph leaves in tape order;
/// `input` is `batch x in_dim`.
pub fn mlp_graph(g: &mut Graph, params: &[Var], input: Var, spec: &MlpSpec) -> Result<Var> {
    if params.len() != spec.num_tensors() {
        return Err(Error::shape("mlp parameter count", spec.num_tensors(), params.len()));
    }
    let mut h = input;
    for (i, l) in spec.layers.iter().enumerate() {
        let width = g.value(h).dims2().1;
        if width != l.in_dim {
            return Err(Error::shape(format!("input to layer {i}"), l.in_dim, width));
        }
        let pre = g.linear(h, params[2 * i], params[2 * i + 1])?;
        h = l.activation.record(g, pre);
    }
    Ok(h)
}
