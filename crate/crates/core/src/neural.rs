//! Minimal dense neural-network kernel.
//!
//! Linear, ReLU, sigmoid, and batch-norm layers with hand-written backward
//! passes, plus the Adam optimizer. Layers cache whatever the backward pass
//! needs, so a layer instance is single-threaded by construction; distinct
//! models can run on distinct threads freely.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::fmath;
use crate::matrix::{axpy, dot, Matrix};
use crate::rng::SeededRng;

/// Errors from the kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum NeuralError {
    /// An input did not have the shape a layer expects.
    ShapeMismatch {
        op: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// Backward was called without a cached forward pass.
    BackwardBeforeForward { layer: &'static str },
    /// Training-mode batch norm needs at least two rows.
    BatchTooSmall { rows: usize },
    /// A gradient block contained NaN or infinity.
    NonFiniteGradient { block: String },
}

impl fmt::Display for NeuralError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { op, expected, got } => write!(
                f,
                "{op}: expected shape {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Self::BackwardBeforeForward { layer } => {
                write!(f, "{layer}: backward called before forward")
            }
            Self::BatchTooSmall { rows } => write!(
                f,
                "batch norm requires a training batch of at least 2 rows, got {rows}"
            ),
            Self::NonFiniteGradient { block } => {
                write!(f, "non-finite gradient in parameter block {block}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for NeuralError {}

pub type Result<T> = core::result::Result<T, NeuralError>;

/// Which tensor of a layer a parameter block refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Weight => write!(f, "weight"),
            Self::Bias => write!(f, "bias"),
            Self::Gamma => write!(f, "gamma"),
            Self::Beta => write!(f, "beta"),
        }
    }
}

/// Mutable view of one parameter tensor and its gradient accumulator.
///
/// The optimizer and gradient checks traverse a model through these blocks;
/// iteration order is fixed by construction order.
pub struct ParamBlock<'a> {
    pub label: &'a str,
    pub kind: ParamKind,
    pub values: &'a mut [f64],
    pub grads: &'a mut [f64],
}

impl ParamBlock<'_> {
    pub fn name(&self) -> String {
        alloc::format!("{}.{}", self.label, self.kind)
    }
}

/// Fully connected layer `y = x Wᵀ + b` with weight shape `out × in`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearLayer {
    label: String,
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
    #[serde(skip)]
    grad_weight: Vec<f64>,
    #[serde(skip)]
    grad_bias: Vec<f64>,
    #[serde(skip)]
    cached_input: Option<Matrix>,
}

impl LinearLayer {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn new(label: &str, in_dim: usize, out_dim: usize, rng: &mut SeededRng) -> Self {
        let limit = fmath::sqrt(6.0 / (in_dim + out_dim) as f64);
        let weight = (0..in_dim * out_dim)
            .map(|_| (crate::rng::uniform(rng) * 2.0 - 1.0) * limit)
            .collect();
        Self {
            label: String::from(label),
            in_dim,
            out_dim,
            weight,
            bias: alloc::vec![0.0; out_dim],
            grad_weight: alloc::vec![0.0; in_dim * out_dim],
            grad_bias: alloc::vec![0.0; out_dim],
            cached_input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Test hook: overwrite the weight matrix (row-major `out × in`).
    pub fn set_weights(&mut self, weight: &[f64], bias: &[f64]) {
        assert_eq!(weight.len(), self.weight.len());
        assert_eq!(bias.len(), self.bias.len());
        self.weight.copy_from_slice(weight);
        self.bias.copy_from_slice(bias);
    }

    pub fn forward(&mut self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.in_dim {
            return Err(NeuralError::ShapeMismatch {
                op: "linear forward",
                expected: (input.rows(), self.in_dim),
                got: (input.rows(), input.cols()),
            });
        }
        let n = input.rows();
        let mut out = Matrix::zeros(n, self.out_dim);
        for r in 0..n {
            let x = input.row(r);
            let o_row = out.row_mut(r);
            for o in 0..self.out_dim {
                let w = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                o_row[o] = dot(x, w) + self.bias[o];
            }
        }
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    /// Accumulates weight/bias gradients and returns the gradient wrt input.
    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or(NeuralError::BackwardBeforeForward { layer: "linear" })?;
        if grad_out.rows() != input.rows() || grad_out.cols() != self.out_dim {
            return Err(NeuralError::ShapeMismatch {
                op: "linear backward",
                expected: (input.rows(), self.out_dim),
                got: (grad_out.rows(), grad_out.cols()),
            });
        }
        let n = input.rows();
        let mut grad_in = Matrix::zeros(n, self.in_dim);
        for r in 0..n {
            let g = grad_out.row(r);
            let x = input.row(r);
            let gi = grad_in.row_mut(r);
            for o in 0..self.out_dim {
                let go = g[o];
                if go != 0.0 {
                    let w_row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                    axpy(go, w_row, gi);
                    axpy(go, x, &mut self.grad_weight[o * self.in_dim..(o + 1) * self.in_dim]);
                }
                self.grad_bias[o] += go;
            }
        }
        Ok(grad_in)
    }

    pub fn param_blocks(&mut self) -> Vec<ParamBlock<'_>> {
        alloc::vec![
            ParamBlock {
                label: &self.label,
                kind: ParamKind::Weight,
                values: &mut self.weight,
                grads: &mut self.grad_weight,
            },
            ParamBlock {
                label: &self.label,
                kind: ParamKind::Bias,
                values: &mut self.bias,
                grads: &mut self.grad_bias,
            },
        ]
    }

    /// Reallocates gradient buffers; needed after deserialization since they
    /// are not stored.
    pub fn ensure_grad_buffers(&mut self) {
        if self.grad_weight.len() != self.weight.len() {
            self.grad_weight = alloc::vec![0.0; self.weight.len()];
        }
        if self.grad_bias.len() != self.bias.len() {
            self.grad_bias = alloc::vec![0.0; self.bias.len()];
        }
    }
}

/// Elementwise `max(0, x)`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReluLayer {
    #[serde(skip)]
    cached_input: Option<Matrix>,
}

impl ReluLayer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, input: &Matrix) -> Matrix {
        let mut out = input.clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.cached_input = Some(input.clone());
        out
    }

    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or(NeuralError::BackwardBeforeForward { layer: "relu" })?;
        let mut grad_in = grad_out.clone();
        for (g, &x) in grad_in.data_mut().iter_mut().zip(input.data()) {
            if x <= 0.0 {
                *g = 0.0;
            }
        }
        Ok(grad_in)
    }
}

/// Elementwise logistic function.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SigmoidLayer {
    #[serde(skip)]
    cached_output: Option<Matrix>,
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + fmath::exp(-x))
    } else {
        let e = fmath::exp(x);
        e / (1.0 + e)
    }
}

impl SigmoidLayer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, input: &Matrix) -> Matrix {
        let mut out = input.clone();
        for v in out.data_mut() {
            *v = sigmoid(*v);
        }
        self.cached_output = Some(out.clone());
        out
    }

    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let output = self
            .cached_output
            .as_ref()
            .ok_or(NeuralError::BackwardBeforeForward { layer: "sigmoid" })?;
        let mut grad_in = grad_out.clone();
        for (g, &s) in grad_in.data_mut().iter_mut().zip(output.data()) {
            *g *= s * (1.0 - s);
        }
        Ok(grad_in)
    }
}

#[derive(Debug, Clone)]
struct BatchNormCache {
    x_hat: Matrix,
    inv_std: Vec<f64>,
}

/// Batch normalization over feature columns.
///
/// Training mode normalizes by batch statistics (biased variance) and updates
/// the running statistics with momentum; the running variance uses the
/// unbiased estimator. Eval mode reads running statistics only, so its output
/// for a row never depends on the rest of the batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchNormLayer {
    label: String,
    dim: usize,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    momentum: f64,
    epsilon: f64,
    #[serde(skip)]
    grad_gamma: Vec<f64>,
    #[serde(skip)]
    grad_beta: Vec<f64>,
    #[serde(skip)]
    cache: Option<BatchNormCache>,
}

impl BatchNormLayer {
    pub fn new(label: &str, dim: usize, momentum: f64, epsilon: f64) -> Self {
        assert!(momentum > 0.0 && momentum < 1.0);
        assert!(epsilon > 0.0);
        Self {
            label: String::from(label),
            dim,
            gamma: alloc::vec![1.0; dim],
            beta: alloc::vec![0.0; dim],
            running_mean: alloc::vec![0.0; dim],
            running_var: alloc::vec![1.0; dim],
            momentum,
            epsilon,
            grad_gamma: alloc::vec![0.0; dim],
            grad_beta: alloc::vec![0.0; dim],
            cache: None,
        }
    }

    pub fn running_stats(&self) -> (&[f64], &[f64]) {
        (&self.running_mean, &self.running_var)
    }

    /// Test hook: overwrite running statistics.
    pub fn set_running_stats(&mut self, mean: &[f64], var: &[f64]) {
        assert_eq!(mean.len(), self.dim);
        assert_eq!(var.len(), self.dim);
        assert!(var.iter().all(|&v| v > 0.0));
        self.running_mean.copy_from_slice(mean);
        self.running_var.copy_from_slice(var);
    }

    pub fn forward(&mut self, input: &Matrix, training: bool) -> Result<Matrix> {
        if input.cols() != self.dim {
            return Err(NeuralError::ShapeMismatch {
                op: "batch norm forward",
                expected: (input.rows(), self.dim),
                got: (input.rows(), input.cols()),
            });
        }
        let n = input.rows();
        if training {
            if n < 2 {
                return Err(NeuralError::BatchTooSmall { rows: n });
            }
            let nf = n as f64;
            let mut mean = alloc::vec![0.0; self.dim];
            for r in 0..n {
                for (m, &x) in mean.iter_mut().zip(input.row(r)) {
                    *m += x;
                }
            }
            for m in &mut mean {
                *m /= nf;
            }
            let mut var = alloc::vec![0.0; self.dim];
            for r in 0..n {
                for (j, &x) in input.row(r).iter().enumerate() {
                    let d = x - mean[j];
                    var[j] += d * d;
                }
            }
            for v in &mut var {
                *v /= nf;
            }
            let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / fmath::sqrt(v + self.epsilon)).collect();

            let mut x_hat = Matrix::zeros(n, self.dim);
            let mut out = Matrix::zeros(n, self.dim);
            for r in 0..n {
                for j in 0..self.dim {
                    let xh = (input.get(r, j) - mean[j]) * inv_std[j];
                    x_hat.set(r, j, xh);
                    out.set(r, j, self.gamma[j] * xh + self.beta[j]);
                }
            }
            let bessel = nf / (nf - 1.0);
            for j in 0..self.dim {
                self.running_mean[j] =
                    (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
                self.running_var[j] =
                    (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j] * bessel;
            }
            self.cache = Some(BatchNormCache { x_hat, inv_std });
            Ok(out)
        } else {
            let mut out = Matrix::zeros(n, self.dim);
            for r in 0..n {
                for j in 0..self.dim {
                    let xh = (input.get(r, j) - self.running_mean[j])
                        / fmath::sqrt(self.running_var[j] + self.epsilon);
                    out.set(r, j, self.gamma[j] * xh + self.beta[j]);
                }
            }
            Ok(out)
        }
    }

    /// Training-mode backward; accounts for the batch statistics' dependence
    /// on every row.
    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(NeuralError::BackwardBeforeForward { layer: "batch norm" })?;
        let n = cache.x_hat.rows();
        if grad_out.rows() != n || grad_out.cols() != self.dim {
            return Err(NeuralError::ShapeMismatch {
                op: "batch norm backward",
                expected: (n, self.dim),
                got: (grad_out.rows(), grad_out.cols()),
            });
        }
        let nf = n as f64;
        let mut sum_dy = alloc::vec![0.0; self.dim];
        let mut sum_dy_xhat = alloc::vec![0.0; self.dim];
        for r in 0..n {
            for j in 0..self.dim {
                let dy = grad_out.get(r, j);
                sum_dy[j] += dy;
                sum_dy_xhat[j] += dy * cache.x_hat.get(r, j);
            }
        }
        for j in 0..self.dim {
            self.grad_gamma[j] += sum_dy_xhat[j];
            self.grad_beta[j] += sum_dy[j];
        }
        let mut grad_in = Matrix::zeros(n, self.dim);
        for r in 0..n {
            for j in 0..self.dim {
                let dy = grad_out.get(r, j);
                let xh = cache.x_hat.get(r, j);
                let dx = self.gamma[j] * cache.inv_std[j]
                    * (dy - sum_dy[j] / nf - xh * sum_dy_xhat[j] / nf);
                grad_in.set(r, j, dx);
            }
        }
        Ok(grad_in)
    }

    pub fn param_blocks(&mut self) -> Vec<ParamBlock<'_>> {
        alloc::vec![
            ParamBlock {
                label: &self.label,
                kind: ParamKind::Gamma,
                values: &mut self.gamma,
                grads: &mut self.grad_gamma,
            },
            ParamBlock {
                label: &self.label,
                kind: ParamKind::Beta,
                values: &mut self.beta,
                grads: &mut self.grad_beta,
            },
        ]
    }

    /// Reallocates gradient buffers; needed after deserialization.
    pub fn ensure_grad_buffers(&mut self) {
        if self.grad_gamma.len() != self.dim {
            self.grad_gamma = alloc::vec![0.0; self.dim];
        }
        if self.grad_beta.len() != self.dim {
            self.grad_beta = alloc::vec![0.0; self.dim];
        }
    }
}

/// A layer in a feed-forward stack.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Layer {
    Linear(LinearLayer),
    Relu(ReluLayer),
    BatchNorm(BatchNormLayer),
    Sigmoid(SigmoidLayer),
}

impl Layer {
    pub fn forward(&mut self, input: &Matrix, training: bool) -> Result<Matrix> {
        match self {
            Self::Linear(l) => l.forward(input),
            Self::Relu(l) => Ok(l.forward(input)),
            Self::BatchNorm(l) => l.forward(input, training),
            Self::Sigmoid(l) => Ok(l.forward(input)),
        }
    }

    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        match self {
            Self::Linear(l) => l.backward(grad_out),
            Self::Relu(l) => l.backward(grad_out),
            Self::BatchNorm(l) => l.backward(grad_out),
            Self::Sigmoid(l) => l.backward(grad_out),
        }
    }

    pub fn param_blocks(&mut self) -> Vec<ParamBlock<'_>> {
        match self {
            Self::Linear(l) => l.param_blocks(),
            Self::BatchNorm(l) => l.param_blocks(),
            Self::Relu(_) | Self::Sigmoid(_) => Vec::new(),
        }
    }

    fn ensure_grad_buffers(&mut self) {
        match self {
            Self::Linear(l) => l.ensure_grad_buffers(),
            Self::BatchNorm(l) => l.ensure_grad_buffers(),
            Self::Relu(_) | Self::Sigmoid(_) => {}
        }
    }
}

/// A stack of layers applied in order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(&mut self, input: &Matrix, training: bool) -> Result<Matrix> {
        let mut h = input.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, training)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn param_blocks(&mut self) -> Vec<ParamBlock<'_>> {
        self.layers
            .iter_mut()
            .flat_map(Layer::param_blocks)
            .collect()
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Restores gradient buffers after deserialization (they are not stored).
    pub fn ensure_grad_buffers(&mut self) {
        for layer in &mut self.layers {
            layer.ensure_grad_buffers();
        }
    }
}

/// Adam optimizer state over an ordered sequence of parameter blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Standard defaults: β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One Adam update over `blocks`, using each block's accumulated gradient.
    ///
    /// Moment buffers are allocated on the first call; the block sequence must
    /// be the same (order and shapes) on every call.
    pub fn step(&mut self, blocks: &mut [ParamBlock<'_>]) -> Result<()> {
        if self.first_moment.is_empty() {
            self.first_moment = blocks.iter().map(|b| alloc::vec![0.0; b.values.len()]).collect();
            self.second_moment = self.first_moment.clone();
        }
        assert_eq!(self.first_moment.len(), blocks.len(), "parameter block count changed");
        for (block, m) in blocks.iter().zip(&self.first_moment) {
            assert_eq!(block.values.len(), m.len(), "parameter block shape changed");
            if block.grads.iter().any(|g| !g.is_finite()) {
                return Err(NeuralError::NonFiniteGradient { block: block.name() });
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - fmath::powi(self.beta1, t);
        let bc2 = 1.0 - fmath::powi(self.beta2, t);

        for (i, block) in blocks.iter_mut().enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..block.values.len() {
                let g = block.grads[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                block.values[j] -= self.learning_rate * m_hat / (fmath::sqrt(v_hat) + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Zeroes every gradient accumulator in `blocks`.
pub fn zero_grads(blocks: &mut [ParamBlock<'_>]) {
    for block in blocks {
        block.grads.fill(0.0);
    }
}
