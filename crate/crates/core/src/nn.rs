//! Dense feed-forward networks with hand-written backpropagation and
//! SGD with classical momentum. Shared by the bridge encoder and the
//! BBScore classifier.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Nonlinearity applied after every layer except the last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation value.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::InvalidConfig(format!(
                "unknown activation {other:?}"
            ))),
        }
    }
}

/// Fully connected layer, weights stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform initialisation in `±1/sqrt(in_dim)`.
    pub fn uniform(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = || rng.random_range(-bound..bound);
        let weights = (0..in_dim * out_dim).map(|_| draw()).collect();
        let bias = (0..out_dim).map(|_| draw()).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias,
        }
    }

    /// Builds a layer from nested `[out][in]` weights and a bias vector.
    pub fn from_nested(weights: &[Vec<f64>], bias: &[f64]) -> Result<Self> {
        let out_dim = weights.len();
        let in_dim = weights.first().map(Vec::len).unwrap_or(0);
        if out_dim == 0 || in_dim == 0 {
            return Err(Error::InvalidConfig("empty weight matrix".into()));
        }
        if bias.len() != out_dim {
            return Err(Error::DimMismatch {
                expected: out_dim,
                found: bias.len(),
            });
        }
        let mut flat = Vec::with_capacity(out_dim * in_dim);
        for row in weights {
            if row.len() != in_dim {
                return Err(Error::DimMismatch {
                    expected: in_dim,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        if flat.iter().chain(bias).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite layer parameter".into()));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights: flat,
            bias: bias.to_vec(),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights_nested(&self) -> Vec<Vec<f64>> {
        self.weights
            .chunks_exact(self.in_dim)
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.in_dim)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `inputs[l]` is the input to layer `l` (post-activation of layer `l-1`).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of every layer; the last one is the network output.
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().expect("network has at least one layer")
    }

    /// Pre-activations of the hidden layers, input side first.
    pub fn hidden_pre(&self) -> &[Vec<f64>] {
        &self.pre[..self.pre.len() - 1]
    }
}

/// A stack of dense layers with a shared hidden activation and identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    activation: Activation,
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig(
                "network needs at least one layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::DimMismatch {
                    expected: pair[0].out_dim,
                    found: pair[1].in_dim,
                });
            }
        }
        Ok(Self { layers, activation })
    }

    /// Randomly initialised network with layer widths `dims[0] -> ... -> dims[last]`.
    pub fn new(dims: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|d| Dense::uniform(d[0], d[1], rng))
            .collect();
        Self::from_layers(layers, activation)
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        check_dims(dims)?;
        let layers = dims.windows(2).map(|d| Dense::zeros(d[0], d[1])).collect();
        Self::from_layers(layers, activation)
    }

    /// Same shapes, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.in_dim, l.out_dim))
                .collect(),
            activation: self.activation,
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Layer widths including input and output.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).pre.pop().unwrap_or_default()
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.forward_into(&current, &mut z);
            inputs.push(current);
            current = if l < last {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                Vec::new()
            };
            pre.push(z);
        }
        Trace { inputs, pre }
    }

    /// Accumulates into `grads` the parameter gradient of a scalar loss whose
    /// gradient with respect to this pass's output is `grad_out`.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut Mlp) {
        debug_assert_eq!(grad_out.len(), self.output_dim());
        let mut g = grad_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.inputs[l];
            let acc = &mut grads.layers[l];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let row = &mut acc.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, &x) in row.iter_mut().zip(input) {
                    *w += go * x;
                }
                acc.bias[o] += go;
            }
            if l == 0 {
                break;
            }
            let prev_pre = &trace.pre[l - 1];
            let mut next = vec![0.0; layer.in_dim];
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += go * w;
                }
            }
            for (n, &p) in next.iter_mut().zip(prev_pre) {
                *n *= self.activation.derivative(p);
            }
            g = next;
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters in a fixed order: per layer, weights then bias.
    pub fn params(&self) -> impl Iterator<Item = &f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_params());
        for (p, v) in self.params_mut().zip(values) {
            *p = *v;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for p in self.params_mut() {
            *p *= c;
        }
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Mlp) {
        for (p, q) in self.params_mut().zip(other.params()) {
            *p += q;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "invalid layer widths {dims:?}"
        )));
    }
    Ok(())
}

/// Stochastic gradient descent with classical momentum:
/// `v <- momentum * v + g`, `theta <- theta - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be nonnegative, got {lr}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn step(&mut self, params: &mut Mlp, grads: &Mlp) {
        if self.velocity.len() != params.num_params() {
            self.velocity = vec![0.0; params.num_params()];
        }
        for ((p, g), v) in params
            .params_mut()
            .zip(grads.params())
            .zip(&mut self.velocity)
        {
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
    }
}

/// Numerically stable `ln(sum(exp(x)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| (x - lse).exp()).collect()
}
