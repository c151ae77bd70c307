use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{shape_error, Layer, Mode, NnError, Param, Tensor};

pub const BN_EPS: f32 = 1e-5;
/// Weight of the newest batch in the running averages.
pub const BN_MOMENTUM: f32 = 0.1;

/// Per-channel batch normalization over `N×C` or `N×C×H×W` input.
/// Training uses batch statistics (biased variance) and updates running
/// averages (unbiased variance); evaluation uses the running averages.
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    cache: Option<Cache>,
}

struct Cache {
    shape: Vec<usize>,
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
    train: bool,
}

fn layout(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [n, c] => Some((n, c, 1)),
        [n, c, h, w] => Some((n, c, h * w)),
        _ => None,
    }
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new("gamma", Tensor::full(&[channels], 1.0)),
            beta: Param::new("beta", Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            cache: None,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

impl Layer for BatchNorm {
    fn kind(&self) -> &'static str {
        "batchnorm"
    }

    fn describe(&self) -> String {
        format!("batchnorm({})", self.channels())
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor, NnError> {
        let Some((n, c, hw)) = layout(x.shape()).filter(|l| l.1 == self.channels()) else {
            return Err(shape_error("batchnorm", &[0, self.channels()], x.shape()));
        };
        let train = mode == Mode::Train;
        if train && n * hw < 2 {
            return Err(NnError::BatchTooSmall(n));
        }
        let m = (n * hw) as f64;
        let mut inv_std = alloc::vec![0.0f32; c];
        let mut mean = alloc::vec![0.0f32; c];
        for ch in 0..c {
            let values = (0..n).flat_map(|s| &x.data()[(s * c + ch) * hw..][..hw]);
            if train {
                let (sum, sq) = values.fold((0.0f64, 0.0f64), |(a, b), &v| (a + v as f64, b + (v as f64) * (v as f64)));
                let mu = sum / m;
                let var = (sq / m - mu * mu).max(0.0);
                mean[ch] = mu as f32;
                inv_std[ch] = (1.0 / (var + BN_EPS as f64).sqrt()) as f32;
                let unbiased = var * m / (m - 1.0);
                let rm = &mut self.running_mean.data_mut()[ch];
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mu as f32;
                let rv = &mut self.running_var.data_mut()[ch];
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * unbiased as f32;
            } else {
                mean[ch] = self.running_mean.data()[ch];
                inv_std[ch] = 1.0 / (self.running_var.data()[ch] + BN_EPS).sqrt();
            }
        }
        let mut xhat = alloc::vec![0.0f32; x.len()];
        let mut y = Tensor::zeros(x.shape());
        for s in 0..n {
            for ch in 0..c {
                let (g, b) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    let h = (x.data()[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    y.data_mut()[i] = g * h + b;
                }
            }
        }
        self.cache = Some(Cache { shape: x.shape().to_vec(), xhat, inv_std, train });
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor, NnError> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForward)?;
        if grad.shape() != cache.shape.as_slice() {
            return Err(shape_error("batchnorm backward", &cache.shape, grad.shape()));
        }
        let (n, c, hw) = layout(&cache.shape).expect("checked in forward");
        let m = (n * hw) as f32;
        let mut dx = Tensor::zeros(&cache.shape);
        for ch in 0..c {
            let idx = || (0..n).flat_map(move |s| (s * c + ch) * hw..(s * c + ch + 1) * hw);
            let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
            for i in idx() {
                sum_g += grad.data()[i] as f64;
                sum_gx += (grad.data()[i] * cache.xhat[i]) as f64;
            }
            self.gamma.grad.data_mut()[ch] += sum_gx as f32;
            self.beta.grad.data_mut()[ch] += sum_g as f32;
            let scale = self.gamma.value.data()[ch] * cache.inv_std[ch];
            for i in idx() {
                dx.data_mut()[i] = if cache.train {
                    scale / m * (m * grad.data()[i] - sum_g as f32 - cache.xhat[i] * sum_gx as f32)
                } else {
                    scale * grad.data()[i]
                };
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        alloc::vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        alloc::vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        alloc::vec![("running_mean", &self.running_mean), ("running_var", &self.running_var)]
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        alloc::vec![("running_mean", &mut self.running_mean), ("running_var", &mut self.running_var)]
    }
}
