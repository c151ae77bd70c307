use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{shape_error, Layer, Mode, NnError, Tensor};

pub fn relu(x: f32) -> f32 {
    x.max(0.0)
}

pub fn leaky_relu(x: f32, slope: f32) -> f32 {
    if x > 0.0 { x } else { slope * x }
}

pub fn elu(x: f32, alpha: f32) -> f32 {
    if x > 0.0 { x } else { alpha * libm::expm1f(x) }
}

/// Row-wise softmax of an `N×K` tensor, max-shifted for stability.
pub fn softmax(logits: &Tensor) -> Result<Tensor, NnError> {
    let [_, k] = *logits.shape() else {
        return Err(shape_error("softmax", &[0, 0], logits.shape()));
    };
    let mut out = logits.clone();
    if k == 0 {
        return Ok(out);
    }
    for row in out.data_mut().chunks_exact_mut(k) {
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut z = 0.0f64;
        for v in row.iter_mut() {
            *v = libm::expf(*v - m);
            z += *v as f64;
        }
        for v in row.iter_mut() {
            *v = (*v as f64 / z) as f32;
        }
    }
    Ok(out)
}

/// Elementwise activation that keeps its input for the backward pass.
macro_rules! pointwise {
    ($name:ident, $kind:literal, $field:ident, $kinked:literal, |$x:ident, $p:ident| $f:expr, |$dx:ident, $dp:ident| $df:expr) => {
        pub struct $name {
            pub $field: f32,
            input: Option<Tensor>,
        }

        impl Layer for $name {
            fn kind(&self) -> &'static str {
                $kind
            }

            fn describe(&self) -> String {
                format!(concat!($kind, "({})"), self.$field)
            }

            fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor, NnError> {
                let $p = self.$field;
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| {
                    let $x = *v;
                    *v = $f;
                });
                self.input = Some(x.clone());
                Ok(y)
            }

            fn backward(&mut self, grad: &Tensor) -> Result<Tensor, NnError> {
                let x = self.input.as_ref().ok_or(NnError::NoForward)?;
                if x.shape() != grad.shape() {
                    return Err(shape_error($kind, x.shape(), grad.shape()));
                }
                let $dp = self.$field;
                let mut g = grad.clone();
                for (gv, &$dx) in g.data_mut().iter_mut().zip(x.data()) {
                    *gv *= $df;
                }
                Ok(g)
            }

            fn kink_pattern(&self, out: &mut Vec<bool>) {
                if let (true, Some(x)) = ($kinked, &self.input) {
                    out.extend(x.data().iter().map(|&v| v > 0.0));
                }
            }
        }
    };
}

pointwise!(LeakyRelu, "leaky_relu", slope, true, |x, s| leaky_relu(x, s), |x, s| if x > 0.0 { 1.0 } else { s });
pointwise!(Elu, "elu", alpha, false, |x, a| elu(x, a), |x, a| if x > 0.0 { 1.0 } else { a * libm::expf(x) });
// The field is unused by the maths; it only keeps the macro uniform.
pointwise!(Relu, "relu", _unused, true, |x, _u| relu(x), |x, _u| if x > 0.0 { 1.0 } else { 0.0 });

impl LeakyRelu {
    pub fn new(slope: f32) -> Self {
        Self { slope, input: None }
    }
}

impl Elu {
    pub fn new(alpha: f32) -> Self {
        Self { alpha, input: None }
    }
}

impl Relu {
    pub fn new() -> Self {
        Self { _unused: 0.0, input: None }
    }
}

impl Default for Relu {
    fn default() -> Self {
        Self::new()
    }
}

/// Collapses everything but the batch axis.
#[derive(Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Flatten {
    fn kind(&self) -> &'static str {
        "flatten"
    }

    fn describe(&self) -> String {
        "flatten".into()
    }

    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor, NnError> {
        let Some(&n) = x.shape().first() else {
            return Err(shape_error("flatten", &[0, 0], x.shape()));
        };
        self.input_shape = Some(x.shape().to_vec());
        x.clone().reshape(&[n, x.len() / n.max(1)])
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor, NnError> {
        let shape = self.input_shape.as_ref().ok_or(NnError::NoForward)?;
        grad.clone().reshape(shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_values() {
        assert_eq!(relu(-2.0), 0.0);
        assert_eq!(relu(3.0), 3.0);
        assert_eq!(leaky_relu(-1.0, 0.2), -0.2);
        assert!((elu(-1.0, 1.0) - (libm::exp(-1.0) - 1.0) as f32).abs() < 1e-7);
        assert_eq!(elu(0.5, 1.0), 0.5);
    }

    #[test]
    fn uniform_logits_give_quarters() {
        let p = softmax(&Tensor::full(&[2, 4], 0.7)).unwrap();
        assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn softmax_handles_large_logits() {
        let x = Tensor::from_vec(&[1, 3], alloc::vec![1000.0, 1000.0, -1000.0]).unwrap();
        let p = softmax(&x).unwrap();
        assert!((p.data()[0] - 0.5).abs() < 1e-6 && p.data()[2] == 0.0);
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(v in proptest::collection::vec(-50.0f32..50.0, 12)) {
            let p = softmax(&Tensor::from_vec(&[3, 4], v).unwrap()).unwrap();
            for row in p.data().chunks(4) {
                prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
                prop_assert!((row.iter().map(|&x| x as f64).sum::<f64>() - 1.0).abs() < 1e-5);
            }
        }

        #[test]
        fn softmax_is_shift_invariant(v in proptest::collection::vec(-20.0f32..20.0, 4), c in -30.0f32..30.0) {
            let a = softmax(&Tensor::from_vec(&[1, 4], v.clone()).unwrap()).unwrap();
            let b = softmax(&Tensor::from_vec(&[1, 4], v.iter().map(|x| x + c).collect()).unwrap()).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Keep inputs away from the kink at zero where central differences
        // straddle two slopes.
        let mut x = Tensor::randn(&[2, 3, 4, 4], 1.0, &mut rng);
        x.data_mut().iter_mut().for_each(|v| if v.abs() < 0.05 { *v += 0.1 });
        let layers: [&mut dyn Layer; 4] =
            [&mut Relu::new(), &mut LeakyRelu::new(0.2), &mut Elu::new(1.0), &mut Flatten::new()];
        for layer in layers {
            let r = grad_check(layer, &x, Mode::Train, &mut rng).unwrap();
            assert!(r.max_rel < 1e-3, "{r:?}");
        }
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let g = Tensor::zeros(&[1, 2]);
        assert_eq!(Relu::new().backward(&g), Err(NnError::NoForward));
    }
}
