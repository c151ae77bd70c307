//! Convolution and transposed convolution through im2col and a GEMM.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::{shape_error, Layer, Mode, NnError, Param, Tensor, INIT_STD};

/// Side of every kernel the models use.
pub const KERNEL: usize = 4;

/// Output side of a convolution, `None` if the window does not fit.
pub fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    (padded >= k && stride > 0).then(|| (padded - k) / stride + 1)
}

/// Output side of a transposed convolution, `None` if it would be empty.
pub fn deconv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let full = (size.checked_sub(1)?) * stride + k;
    full.checked_sub(2 * pad).filter(|&n| n > 0)
}

/// `c = a·b + beta·c` with `a` m×k and `b` k×n, either stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

/// Unfolds `x` (`channels×h×w`) into `(channels·k·k) × (oh·ow)` columns.
fn im2col(x: &[f32], g: &Geometry, col: &mut [f32]) {
    let cols = g.oh * g.ow;
    for c in 0..g.channels {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let out = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let y = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut out[oy * g.ow..(oy + 1) * g.ow];
                    if y < 0 || y >= g.h as isize {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + y as usize) * g.w..][..g.w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let xx = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if xx < 0 || xx >= g.w as isize { 0.0 } else { src[xx as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlaps into `x`.
fn col2im(col: &[f32], g: &Geometry, x: &mut [f32]) {
    let cols = g.oh * g.ow;
    for c in 0..g.channels {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let y = (oy * g.stride + ki) as isize - g.pad as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let dst = &mut x[(c * g.h + y as usize) * g.w..][..g.w];
                    for ox in 0..g.ow {
                        let xx = (ox * g.stride + kj) as isize - g.pad as isize;
                        if xx >= 0 && xx < g.w as isize {
                            dst[xx as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn dims4(op: &'static str, t: &Tensor) -> Result<[usize; 4], NnError> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(shape_error(op, &[0, 0, 0, 0], t.shape())),
    }
}

fn kernel_dims(op: &'static str, weight: &Tensor) -> Result<[usize; 3], NnError> {
    let [a, b, k, k2] = dims4(op, weight)?;
    if k != k2 {
        return Err(shape_error(op, &[a, b, k, k], weight.shape()));
    }
    Ok([a, b, k])
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, channels: usize) -> Result<(), NnError> {
    match bias {
        Some(b) if b.shape() != [channels] => Err(shape_error(op, &[channels], b.shape())),
        _ => Ok(()),
    }
}

fn fill_bias(dst: &mut [f32], plane: usize, bias: Option<&Tensor>) {
    match bias {
        Some(b) => {
            for (chunk, &v) in dst.chunks_exact_mut(plane).zip(b.data()) {
                chunk.iter_mut().for_each(|x| *x = v);
            }
        }
        None => dst.iter_mut().for_each(|x| *x = 0.0),
    }
}

/// Cross-correlation of `input` (`N×C×H×W`) with `weight` (`Co×C×k×k`).
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor, NnError> {
    let [n, c, h, w] = dims4("conv2d", input)?;
    let [co, ci, k] = kernel_dims("conv2d", weight)?;
    if ci != c {
        return Err(shape_error("conv2d", &[n, ci, h, w], input.shape()));
    }
    check_bias("conv2d", bias, co)?;
    let (Some(oh), Some(ow)) = (conv_out(h, k, stride, pad), conv_out(w, k, stride, pad)) else {
        return Err(shape_error("conv2d", &[n, c, k, k], input.shape()));
    };
    let g = Geometry { channels: c, h, w, k, stride, pad, oh, ow };
    let (rows, cols) = (c * k * k, oh * ow);
    let mut col = alloc::vec![0.0; rows * cols];
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    for s in 0..n {
        im2col(&input.data()[s * c * h * w..(s + 1) * c * h * w], &g, &mut col);
        let dst = &mut out.data_mut()[s * co * cols..(s + 1) * co * cols];
        fill_bias(dst, cols, bias);
        gemm(co, rows, cols, weight.data(), false, &col, false, 1.0, dst);
    }
    Ok(out)
}

/// Transposed convolution of `input` (`N×Ci×H×W`) with `weight`
/// (`Ci×Co×k×k`), the adjoint of [`conv2d`] with the same weight tensor.
pub fn deconv2d(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor, NnError> {
    let [n, c, h, w] = dims4("deconv2d", input)?;
    let [ci, co, k] = kernel_dims("deconv2d", weight)?;
    if ci != c {
        return Err(shape_error("deconv2d", &[n, ci, h, w], input.shape()));
    }
    check_bias("deconv2d", bias, co)?;
    let (Some(oh), Some(ow)) = (deconv_out(h, k, stride, pad), deconv_out(w, k, stride, pad)) else {
        return Err(shape_error("deconv2d", &[n, c, 1, 1], input.shape()));
    };
    let g = Geometry { channels: co, h: oh, w: ow, k, stride, pad, oh: h, ow: w };
    let (rows, cols) = (co * k * k, h * w);
    let mut col = alloc::vec![0.0; rows * cols];
    let mut out = Tensor::zeros(&[n, co, oh, ow]);
    for s in 0..n {
        let x = &input.data()[s * c * cols..(s + 1) * c * cols];
        gemm(rows, c, cols, weight.data(), true, x, false, 0.0, &mut col);
        let dst = &mut out.data_mut()[s * co * oh * ow..(s + 1) * co * oh * ow];
        fill_bias(dst, oh * ow, bias);
        col2im(&col, &g, dst);
    }
    Ok(out)
}

fn accumulate_bias(bias: &mut Option<Param>, grad: &[f32], plane: usize) {
    if let Some(b) = bias {
        for (g, chunk) in b.grad.data_mut().iter_mut().zip(grad.chunks_exact(plane)) {
            *g += chunk.iter().sum::<f32>();
        }
    }
}

pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub pad: usize,
    input: Option<Tensor>,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new("weight", Tensor::randn(&[cout, cin, KERNEL, KERNEL], INIT_STD, rng)),
            bias: Some(Param::new("bias", Tensor::zeros(&[cout]))),
            stride,
            pad,
            input: None,
        }
    }
}

impl Conv2d {
    /// Drops the bias, for layers followed by batch normalization.
    pub fn without_bias(mut self) -> Self {
        self.bias = None;
        self
    }
}

impl Layer for Conv2d {
    fn kind(&self) -> &'static str {
        "conv"
    }

    fn describe(&self) -> String {
        let s = self.weight.value.shape();
        format!("conv({},{},k{},s{},p{})", s[1], s[0], s[2], self.stride, self.pad)
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor, NnError> {
        let y = conv2d(x, &self.weight.value, self.bias.as_ref().map(|b| &b.value), self.stride, self.pad)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor, NnError> {
        let x = self.input.as_ref().ok_or(NnError::NoForward)?;
        let [n, c, h, w] = dims4("conv2d backward", x)?;
        let [co, _, k, _] = dims4("conv2d backward", &self.weight.value)?;
        let [gn, gc, oh, ow] = dims4("conv2d backward", grad)?;
        if gn != n || gc != co {
            return Err(shape_error("conv2d backward", &[n, co, oh, ow], grad.shape()));
        }
        let g = Geometry { channels: c, h, w, k, stride: self.stride, pad: self.pad, oh, ow };
        let (rows, cols) = (c * k * k, oh * ow);
        let mut col = alloc::vec![0.0; rows * cols];
        let mut dcol = alloc::vec![0.0; rows * cols];
        let mut dx = Tensor::zeros(x.shape());
        for s in 0..n {
            let gs = &grad.data()[s * co * cols..(s + 1) * co * cols];
            im2col(&x.data()[s * c * h * w..(s + 1) * c * h * w], &g, &mut col);
            gemm(co, cols, rows, gs, false, &col, true, 1.0, self.weight.grad.data_mut());
            accumulate_bias(&mut self.bias, gs, cols);
            gemm(rows, co, cols, self.weight.value.data(), true, gs, false, 0.0, &mut dcol);
            col2im(&dcol, &g, &mut dx.data_mut()[s * c * h * w..(s + 1) * c * h * w]);
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        core::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        core::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

pub struct Deconv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub pad: usize,
    input: Option<Tensor>,
}

impl Deconv2d {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new("weight", Tensor::randn(&[cin, cout, KERNEL, KERNEL], INIT_STD, rng)),
            bias: Some(Param::new("bias", Tensor::zeros(&[cout]))),
            stride,
            pad,
            input: None,
        }
    }
}

impl Deconv2d {
    pub fn without_bias(mut self) -> Self {
        self.bias = None;
        self
    }
}

impl Layer for Deconv2d {
    fn kind(&self) -> &'static str {
        "deconv"
    }

    fn describe(&self) -> String {
        let s = self.weight.value.shape();
        format!("deconv({},{},k{},s{},p{})", s[0], s[1], s[2], self.stride, self.pad)
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor, NnError> {
        let y = deconv2d(x, &self.weight.value, self.bias.as_ref().map(|b| &b.value), self.stride, self.pad)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor, NnError> {
        let x = self.input.as_ref().ok_or(NnError::NoForward)?;
        let [n, ci, h, w] = dims4("deconv2d backward", x)?;
        let [_, co, k, _] = dims4("deconv2d backward", &self.weight.value)?;
        let [gn, gc, oh, ow] = dims4("deconv2d backward", grad)?;
        if gn != n || gc != co {
            return Err(shape_error("deconv2d backward", &[n, co, oh, ow], grad.shape()));
        }
        let g = Geometry { channels: co, h: oh, w: ow, k, stride: self.stride, pad: self.pad, oh: h, ow: w };
        let (rows, cols) = (co * k * k, h * w);
        let mut gcol = alloc::vec![0.0; rows * cols];
        let mut dx = Tensor::zeros(x.shape());
        for s in 0..n {
            let gs = &grad.data()[s * co * oh * ow..(s + 1) * co * oh * ow];
            accumulate_bias(&mut self.bias, gs, oh * ow);
            im2col(gs, &g, &mut gcol);
            let xs = &x.data()[s * ci * cols..(s + 1) * ci * cols];
            gemm(ci, cols, rows, xs, false, &gcol, true, 1.0, self.weight.grad.data_mut());
            gemm(ci, rows, cols, self.weight.value.data(), false, &gcol, false, 0.0, &mut dx.data_mut()[s * ci * cols..(s + 1) * ci * cols]);
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        core::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        core::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}
