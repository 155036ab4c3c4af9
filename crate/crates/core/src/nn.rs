//! Dense multilayer perceptrons on top of the autodiff graph.

use crate::autodiff::{Gradients, Graph, GraphError, NodeId};
use crate::tensor::{self, Tensor, TensorError};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("clip bound must be positive, got {0}")]
    NonPositiveClip(f64),
    #[error("temperature must lie in (0, 1), got {0}")]
    BadTemperature(f64),
    #[error("layer {index}: input width {got} does not match previous output width {expected}")]
    LayerMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("network needs at least one layer")]
    Empty,
    #[error("expected {expected} gradient tensors, got {got}")]
    GradientCount { expected: usize, got: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    /// `σ_λ` with `λ ∈ (0, 1)`.
    TemperatureSigmoid {
        temperature: f64,
    },
}

impl Activation {
    fn apply_graph(self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Activation::Identity => x,
            Activation::Relu => g.relu(x),
            Activation::Sigmoid => g.temperature_sigmoid(x, 1.0),
            Activation::TemperatureSigmoid { temperature } => g.temperature_sigmoid(x, temperature),
        }
    }

    fn apply(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Identity => x.clone(),
            Activation::Relu => x.map(tensor::relu),
            Activation::Sigmoid => x.map(|v| tensor::temperature_sigmoid(v, 1.0)),
            Activation::TemperatureSigmoid { temperature } => {
                x.map(|v| tensor::temperature_sigmoid(v, temperature))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `[fan_in, fan_out]`
    pub weight: Tensor,
    /// `[1, fan_out]`
    pub bias: Tensor,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NetworkError> {
        if layers.is_empty() {
            return Err(NetworkError::Empty);
        }
        for (i, layer) in layers.iter().enumerate() {
            if let Activation::TemperatureSigmoid { temperature } = layer.activation {
                if !(temperature > 0.0 && temperature < 1.0) {
                    return Err(NetworkError::BadTemperature(temperature));
                }
            }
            let fan_out = layer.weight.cols();
            if layer.bias.shape() != [1, fan_out] {
                return Err(NetworkError::Tensor(TensorError::ShapeMismatch {
                    op: "layer bias",
                    lhs: layer.weight.shape().to_vec(),
                    rhs: layer.bias.shape().to_vec(),
                }));
            }
            if i > 0 {
                let expected = layers[i - 1].weight.cols();
                let got = layer.weight.rows();
                if expected != got {
                    return Err(NetworkError::LayerMismatch {
                        index: i,
                        expected,
                        got,
                    });
                }
            }
        }
        Ok(Self { layers })
    }

    /// Builds an MLP with widths `dims[0] → dims[1] → … → dims[last]`, ReLU
    /// between layers and `output` on the last one. Weights are drawn from
    /// `U[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`; biases start at zero.
    pub fn mlp(
        dims: &[usize],
        output: Activation,
        rng: &mut crate::rng::Rng,
    ) -> Result<Self, NetworkError> {
        if dims.len() < 2 {
            return Err(NetworkError::Empty);
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-a..=a))
                .collect();
            let activation = if i + 2 == dims.len() {
                output
            } else {
                Activation::Relu
            };
            layers.push(Layer {
                weight: Tensor::new(vec![fan_in, fan_out], data)?,
                bias: Tensor::zeros(&[1, fan_out]),
                activation,
            });
        }
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.cols()
    }

    /// Parameter tensors in order `W0, b0, W1, b1, …`.
    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    /// Order-sensitive digest of every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params() {
            for v in p.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Registers parameters as graph leaves.
    pub fn bind(&self, g: &mut Graph) -> BoundNetwork {
        let params = self
            .layers
            .iter()
            .map(|l| (g.leaf(l.weight.clone()), g.leaf(l.bias.clone())))
            .collect();
        BoundNetwork { params }
    }

    /// Graph-free forward pass. Uses the same kernels as the graph path, so
    /// results are bitwise identical to [`BoundNetwork::forward`].
    pub fn apply(&self, input: &Tensor) -> Result<Tensor, NetworkError> {
        let mut x = input.clone();
        for layer in &self.layers {
            let h = tensor::matmul(&x, &layer.weight)?;
            let h = tensor::add(&h, &layer.bias)?;
            x = layer.activation.apply(&h);
        }
        Ok(x)
    }

    /// Clamps every parameter entry to `[-c, c]` in place.
    pub fn clip_parameters(&mut self, c: f64) -> Result<(), NetworkError> {
        if c.is_nan() || c <= 0.0 {
            return Err(NetworkError::NonPositiveClip(c));
        }
        for p in self.params_mut() {
            for v in p.data_mut() {
                *v = v.clamp(-c, c);
            }
        }
        Ok(())
    }

    pub fn clipped(&self, c: f64) -> Result<Network, NetworkError> {
        let mut out = self.clone();
        out.clip_parameters(c)?;
        Ok(out)
    }
}

/// Graph handles for a network's parameters.
#[derive(Debug, Clone)]
pub struct BoundNetwork {
    params: Vec<(NodeId, NodeId)>,
}

impl BoundNetwork {
    pub fn forward(
        &self,
        g: &mut Graph,
        net: &Network,
        input: NodeId,
    ) -> Result<NodeId, NetworkError> {
        let mut x = input;
        for (layer, &(w, b)) in net.layers.iter().zip(&self.params) {
            let h = g.matmul(x, w)?;
            let h = g.add(h, b)?;
            x = layer.activation.apply_graph(g, h);
        }
        Ok(x)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.params.iter().flat_map(|&(w, b)| [w, b])
    }

    /// Per-parameter gradients in [`Network::params`] order.
    pub fn gradients(&self, grads: &Gradients, net: &Network) -> Vec<Tensor> {
        self.param_ids()
            .zip(net.params())
            .map(|(id, p)| grads.get_or_zeros(id, p.shape()))
            .collect()
    }
}

/// Adds `scale * other` into `acc`, tensor by tensor.
pub fn axpy(acc: &mut [Tensor], scale: f64, other: &[Tensor]) {
    for (a, o) in acc.iter_mut().zip(other) {
        for (x, y) in a.data_mut().iter_mut().zip(o.data()) {
            *x += scale * y;
        }
    }
}

/// RMSProp without momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
    /// Running mean of squared gradients, one buffer per parameter tensor.
    pub square_avg: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(net: &Network, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            decay: 0.99,
            eps: 1e-8,
            square_avg: net.params().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// Takes a descent step along `grads`.
    pub fn step(&mut self, net: &mut Network, grads: &[Tensor]) -> Result<(), NetworkError> {
        if grads.len() != self.square_avg.len() {
            return Err(NetworkError::GradientCount {
                expected: self.square_avg.len(),
                got: grads.len(),
            });
        }
        let (lr, rho, eps) = (self.learning_rate, self.decay, self.eps);
        for ((param, grad), sq) in net.params_mut().zip(grads).zip(&mut self.square_avg) {
            for ((p, &g), s) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(sq.iter_mut())
            {
                *s = rho * *s + (1.0 - rho) * g * g;
                if lr != 0.0 {
                    *p -= lr * g / (s.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
