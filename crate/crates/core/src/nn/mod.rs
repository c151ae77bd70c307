//! A small training stack: tensors, layers with hand-written backward
//! passes, losses, Adam and the learning-rate schedule.
//!
//! Layers cache what their backward pass needs during `forward`; calling
//! `backward` accumulates parameter gradients and returns the gradient with
//! respect to the layer input. Everything is 32-bit and single-threaded, so
//! results are reproducible bit for bit.

mod activation;
mod conv;
pub mod gradcheck;
mod linear;
mod loss;
mod norm;
mod optim;

pub use activation::{elu, leaky_relu, relu, softmax, Elu, Flatten, LeakyRelu, Relu};
pub use conv::{conv2d, conv_out, deconv2d, deconv_out, Conv2d, Deconv2d, KERNEL};
pub use gradcheck::{grad_check, suite as gradcheck_suite, GradReport, SuiteEntry};
pub use linear::Linear;
pub use loss::{mse, softmax_cross_entropy};
pub use norm::{BatchNorm, BN_EPS, BN_MOMENTUM};
pub use optim::{Adam, AdamConfig, AdamState, LrSchedule};

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("{op}: shape {got:?} does not fit {expected:?}")]
    Shape { op: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("batch normalization needs at least 2 samples in training mode, got {0}")]
    BatchTooSmall(usize),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("backward called before forward")]
    NoForward,
}

pub(crate) fn shape_error(op: &'static str, expected: &[usize], got: &[usize]) -> NnError {
    NnError::Shape { op, expected: expected.to_vec(), got: got.to_vec() }
}

/// Dense row-major `f32` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: alloc::vec![0.0; shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Self { shape: shape.to_vec(), data: alloc::vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_error("from_vec", shape, &[data.len()]));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// IID `Normal(0, std)` entries.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f32, rng: &mut R) -> Self {
        let normal = Normal::new(0.0f32, std).expect("finite std");
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(|_| normal.sample(rng)).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NnError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(shape_error("reshape", shape, &self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Sum of elementwise products, accumulated in `f64`.
    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(&a, &b)| a as f64 * b as f64).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn debug_check(&self) {
        debug_assert!(self.is_finite(), "non-finite value in tensor of shape {:?}", self.shape);
    }
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: &'static str,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: &'static str, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { name, value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub trait Layer: Send {
    /// Short kind name: `conv`, `deconv`, `batchnorm`, ...
    fn kind(&self) -> &'static str;
    /// Kind plus hyperparameters, e.g. `conv(21,64,s2,p1)`.
    fn describe(&self) -> String;
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor, NnError>;
    fn backward(&mut self, grad: &Tensor) -> Result<Tensor, NnError>;
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
    /// Non-trainable state saved with the model (batch-norm running stats).
    fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        Vec::new()
    }
    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        Vec::new()
    }
    /// Appends which side of each derivative discontinuity the last
    /// forward input fell on; gradient checks skip probes that flip one.
    fn kink_pattern(&self, _out: &mut Vec<bool>) {}
}

/// Layers applied in order.
#[derive(Default)]
pub struct Sequential {
    pub layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Layer + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor, NnError> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode)?;
            h.debug_check();
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor, NnError> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
            g.debug_check();
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// `index.kind.name` for every parameter and buffer, in layer order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for p in layer.params() {
                out.push((format!("{i}.{}.{}", layer.kind(), p.name), &p.value));
            }
            for (name, b) in layer.buffers() {
                out.push((format!("{i}.{}.{name}", layer.kind()), b));
            }
        }
        out
    }

    /// Calls `f` with the same names as [`Sequential::named_tensors`] and
    /// mutable access to each tensor, in the same order.
    pub fn visit_tensors_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = layer.kind();
            for p in layer.params_mut() {
                f(&format!("{i}.{kind}.{}", p.name), &mut p.value);
            }
            for (name, b) in layer.buffers_mut() {
                f(&format!("{i}.{kind}.{name}"), b);
            }
        }
    }

    /// One line per layer, joined by `>`.
    pub fn describe(&self) -> String {
        self.layers.iter().map(|l| l.describe()).collect::<Vec<_>>().join(">")
    }
}

impl Layer for Sequential {
    fn kind(&self) -> &'static str {
        "sequential"
    }

    fn describe(&self) -> String {
        Sequential::describe(self)
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor, NnError> {
        Sequential::forward(self, x, mode)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor, NnError> {
        Sequential::backward(self, grad)
    }

    fn params(&self) -> Vec<&Param> {
        Sequential::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Sequential::params_mut(self)
    }

    fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    fn kink_pattern(&self, out: &mut Vec<bool>) {
        for layer in &self.layers {
            layer.kink_pattern(out);
        }
    }
}

/// Weights drawn from `Normal(0, 0.02)`.
pub const INIT_STD: f32 = 0.02;
