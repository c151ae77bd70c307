use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::conv::gemm;
use super::{shape_error, Layer, Mode, NnError, Param, Tensor, INIT_STD};

/// `y = x·Wᵀ + b` with `W` stored `out×in`.
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new("weight", Tensor::randn(&[outputs, inputs], INIT_STD, rng)),
            bias: Param::new("bias", Tensor::zeros(&[outputs])),
            input: None,
        }
    }

    fn dims(&self) -> (usize, usize) {
        (self.weight.value.shape()[1], self.weight.value.shape()[0])
    }
}

impl Layer for Linear {
    fn kind(&self) -> &'static str {
        "linear"
    }

    fn describe(&self) -> String {
        let (i, o) = self.dims();
        format!("linear({i},{o})")
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor, NnError> {
        let (i, o) = self.dims();
        let n = match *x.shape() {
            [n, k] if k == i => n,
            _ => return Err(shape_error("linear", &[x.shape().first().copied().unwrap_or(0), i], x.shape())),
        };
        let mut y = Tensor::zeros(&[n, o]);
        for row in y.data_mut().chunks_exact_mut(o) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(n, i, o, x.data(), false, self.weight.value.data(), true, 1.0, y.data_mut());
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor, NnError> {
        let x = self.input.as_ref().ok_or(NnError::NoForward)?;
        let (i, o) = self.dims();
        let n = x.shape()[0];
        if grad.shape() != [n, o] {
            return Err(shape_error("linear backward", &[n, o], grad.shape()));
        }
        gemm(o, n, i, grad.data(), true, x.data(), false, 1.0, self.weight.grad.data_mut());
        for row in grad.data().chunks_exact(o) {
            for (b, g) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        let mut dx = Tensor::zeros(&[n, i]);
        gemm(n, o, i, grad.data(), false, self.weight.value.data(), false, 0.0, dx.data_mut());
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        alloc::vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        alloc::vec![&mut self.weight, &mut self.bias]
    }
}
