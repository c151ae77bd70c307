//! Central-difference gradient checking for single layers.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::{Layer, Mode, NnError, Tensor};

/// Step used for the central differences.
pub const STEP: f32 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub layer: String,
    /// Worst relative error over the input gradient.
    pub input: f64,
    /// Worst relative error per parameter, by name.
    pub params: Vec<(&'static str, f64)>,
    pub max_rel: f64,
}

impl GradReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel <= tol
    }
}

/// Compares a layer's backward pass with central differences of the scalar
/// `⟨r, layer(x)⟩` for a random projection `r`. Probes that move any
/// activation input across its kink (see [`Layer::kink_pattern`]) are left
/// out, since the difference quotient is meaningless there. Each gradient tensor is
/// scored by `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`: in 32-bit arithmetic with
/// `h = 1e-3` the difference quotient carries ~1e-4 absolute noise, which
/// an entrywise ratio would blow up on entries that are zero up to
/// rounding.
pub fn grad_check<R: Rng + ?Sized>(
    layer: &mut dyn Layer,
    x: &Tensor,
    mode: Mode,
    rng: &mut R,
) -> Result<GradReport, NnError> {
    let y = layer.forward(x, mode)?;
    let pattern = |layer: &dyn Layer| {
        let mut p = Vec::new();
        layer.kink_pattern(&mut p);
        p
    };
    let base = pattern(layer);
    let mut skipped = Vec::new();
    let r = Tensor::randn(y.shape(), 1.0, rng);
    for p in layer.params_mut() {
        p.zero_grad();
    }
    let gx = layer.backward(&r)?;
    let analytic_params: Vec<(&'static str, Tensor)> = layer.params().iter().map(|p| (p.name, p.grad.clone())).collect();

    // Batch statistics drift as a side effect of training-mode forwards;
    // snapshot buffers so the probe leaves the layer as it found it.
    let buffers: Vec<Tensor> = layer.buffers().iter().map(|(_, b)| (*b).clone()).collect();
    let objective = |layer: &mut dyn Layer, x: &Tensor| -> Result<f64, NnError> { Ok(layer.forward(x, mode)?.dot(&r)) };

    let mut numeric = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        let (hi, lo) = (orig + STEP, orig - STEP);
        probe.data_mut()[i] = hi;
        let plus = objective(layer, &probe)?;
        let mut crossed = pattern(layer) != base;
        probe.data_mut()[i] = lo;
        let minus = objective(layer, &probe)?;
        crossed |= pattern(layer) != base;
        probe.data_mut()[i] = orig;
        numeric.data_mut()[i] = ((plus - minus) / (hi - lo) as f64) as f32;
        if crossed {
            skipped.push(i);
        }
    }
    let input = worst(&masked(&gx, &skipped), &masked(&numeric, &skipped));

    let mut params = Vec::new();
    for (k, (name, analytic)) in analytic_params.iter().enumerate() {
        skipped.clear();
        let mut numeric = Tensor::zeros(analytic.shape());
        for i in 0..analytic.len() {
            let orig = layer.params()[k].value.data()[i];
            let (hi, lo) = (orig + STEP, orig - STEP);
            layer.params_mut()[k].value.data_mut()[i] = hi;
            let plus = objective(layer, x)?;
            let mut crossed = pattern(layer) != base;
            layer.params_mut()[k].value.data_mut()[i] = lo;
            let minus = objective(layer, x)?;
            crossed |= pattern(layer) != base;
            layer.params_mut()[k].value.data_mut()[i] = orig;
            numeric.data_mut()[i] = ((plus - minus) / (hi - lo) as f64) as f32;
            if crossed {
                skipped.push(i);
            }
        }
        params.push((*name, worst(&masked(analytic, &skipped), &masked(&numeric, &skipped))));
    }
    for ((_, b), saved) in layer.buffers_mut().into_iter().zip(buffers) {
        *b = saved;
    }
    let max_rel = params.iter().map(|p| p.1).fold(input, f64::max);
    Ok(GradReport { layer: layer.describe(), input, params, max_rel })
}

/// Copy of `t` with the listed entries zeroed.
fn masked(t: &Tensor, skip: &[usize]) -> Tensor {
    let mut t = t.clone();
    for &i in skip {
        t.data_mut()[i] = 0.0;
    }
    t
}

fn worst(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let norm = |t: &mut dyn Iterator<Item = f64>| t.map(|v| v * v).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.data().iter().zip(numeric.data()).map(|(&a, &n)| a as f64 - n as f64));
    let scale = norm(&mut analytic.data().iter().map(|&a| a as f64)).max(norm(&mut numeric.data().iter().map(|&n| n as f64)));
    if scale == 0.0 { 0.0 } else { diff / scale }
}

/// One line of [`suite`]: a layer kind, its worst relative error and the
/// tolerance it is held to.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub kind: &'static str,
    pub report: GradReport,
    pub tolerance: f64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.passed(self.tolerance)
    }
}

/// Central differences of a scalar loss, taken in 64-bit.
fn check_loss(
    kind: &'static str,
    x: &Tensor,
    loss: impl Fn(&Tensor) -> Result<(f64, Tensor), NnError>,
) -> Result<GradReport, NnError> {
    let (_, analytic) = loss(x)?;
    let mut numeric = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        let (hi, lo) = (orig + STEP, orig - STEP);
        probe.data_mut()[i] = hi;
        let plus = loss(&probe)?.0;
        probe.data_mut()[i] = lo;
        let minus = loss(&probe)?.0;
        probe.data_mut()[i] = orig;
        numeric.data_mut()[i] = ((plus - minus) / (hi - lo) as f64) as f32;
    }
    let input = worst(&analytic, &numeric);
    Ok(GradReport { layer: kind.into(), input, params: Vec::new(), max_rel: input })
}

/// A convolution whose backward pass is scaled by `skew`; used as the
/// negative control of the suite.
struct Skewed {
    conv: super::Conv2d,
    skew: f32,
}

impl Layer for Skewed {
    fn kind(&self) -> &'static str {
        "conv"
    }
    fn describe(&self) -> String {
        self.conv.describe()
    }
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor, NnError> {
        self.conv.forward(x, mode)
    }
    fn backward(&mut self, grad: &Tensor) -> Result<Tensor, NnError> {
        let mut g = grad.clone();
        g.data_mut().iter_mut().for_each(|v| *v *= self.skew);
        self.conv.backward(&g)
    }
    fn params(&self) -> Vec<&super::Param> {
        self.conv.params()
    }
    fn params_mut(&mut self) -> Vec<&mut super::Param> {
        self.conv.params_mut()
    }
}

/// Gradient checks over every layer kind and both losses. `conv_skew`
/// scales the convolution's backward pass (1.0 for the real check).
pub fn suite<R: Rng + ?Sized>(rng: &mut R, conv_skew: f32) -> Result<Vec<SuiteEntry>, NnError> {
    use super::{BatchNorm, Conv2d, Deconv2d, Elu, LeakyRelu, Linear, Relu, Sequential};
    let mut out = Vec::new();
    fn run<R: Rng + ?Sized>(
        out: &mut Vec<SuiteEntry>,
        kind: &'static str,
        layer: &mut dyn Layer,
        x: &Tensor,
        tolerance: f64,
        rng: &mut R,
    ) -> Result<(), NnError> {
        let report = grad_check(layer, x, Mode::Train, rng)?;
        out.push(SuiteEntry { kind, report, tolerance });
        Ok(())
    }

    let mut conv = Conv2d::new(3, 4, 2, 1, rng);
    conv.weight.value = Tensor::randn(conv.weight.value.shape(), 0.3, rng);
    conv.bias.as_mut().expect("bias").value = Tensor::randn(&[4], 0.3, rng);
    let x = Tensor::randn(&[2, 3, 8, 8], 1.0, rng);
    run(&mut out, "conv", &mut Skewed { conv, skew: conv_skew }, &x, 1e-3, rng)?;

    let mut deconv = Deconv2d::new(3, 2, 2, 1, rng);
    deconv.weight.value = Tensor::randn(deconv.weight.value.shape(), 0.3, rng);
    let x = Tensor::randn(&[2, 3, 4, 4], 1.0, rng);
    run(&mut out, "deconv", &mut deconv, &x, 1e-3, rng)?;

    let mut bn = BatchNorm::new(3);
    bn.gamma.value = Tensor::randn(&[3], 1.0, rng);
    let x = Tensor::randn(&[4, 3, 3, 3], 1.0, rng);
    run(&mut out, "batchnorm", &mut bn, &x, 1e-3, rng)?;

    let mut linear = Linear::new(6, 4, rng);
    linear.weight.value = Tensor::randn(&[4, 6], 0.5, rng);
    let x = Tensor::randn(&[3, 6], 1.0, rng);
    run(&mut out, "linear", &mut linear, &x, 1e-4, rng)?;

    // Inputs nudged off the activation kinks at zero.
    let mut x = Tensor::randn(&[2, 3, 4, 4], 1.0, rng);
    x.data_mut().iter_mut().for_each(|v| {
        if v.abs() < 0.05 {
            *v += 0.1 * v.signum().max(0.0) + 0.05
        }
    });
    run(&mut out, "relu", &mut Relu::new(), &x, 1e-3, rng)?;
    run(&mut out, "leaky_relu", &mut LeakyRelu::new(0.2), &x, 1e-3, rng)?;
    run(&mut out, "elu", &mut Elu::new(1.0), &x, 1e-3, rng)?;

    let logits = Tensor::randn(&[4, 4], 1.0, rng);
    let report = check_loss("cross_entropy", &logits, |x| super::softmax_cross_entropy(x, &[0, 3, 1, 2]))?;
    out.push(SuiteEntry { kind: "cross_entropy", report, tolerance: 1e-3 });
    let target = Tensor::randn(&[2, 3, 4, 4], 1.0, rng);
    let report = check_loss("mse", &Tensor::randn(&[2, 3, 4, 4], 1.0, rng), |x| super::mse(x, &target))?;
    out.push(SuiteEntry { kind: "mse", report, tolerance: 1e-3 });

    let mut stack = Sequential::new();
    for (cin, cout) in [(2, 3), (3, 4)] {
        let mut c = Conv2d::new(cin, cout, 1, 1, rng).without_bias();
        c.weight.value = Tensor::randn(c.weight.value.shape(), 0.3, rng);
        stack.push(c);
        stack.push(BatchNorm::new(cout));
        stack.push(Relu::new());
    }
    let x = Tensor::randn(&[3, 2, 5, 5], 1.0, rng);
    run(&mut out, "conv_bn_relu_stack", &mut stack, &x, 5e-3, rng)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Conv2d, Param};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// A convolution whose backward pass is off by 10 %.
    struct Skewed(Conv2d);

    impl Layer for Skewed {
        fn kind(&self) -> &'static str {
            "skewed"
        }
        fn describe(&self) -> String {
            "skewed".into()
        }
        fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor, NnError> {
            self.0.forward(x, mode)
        }
        fn backward(&mut self, grad: &Tensor) -> Result<Tensor, NnError> {
            let mut g = grad.clone();
            g.data_mut().iter_mut().for_each(|v| *v *= 1.1);
            self.0.backward(&g)
        }
        fn params(&self) -> Vec<&Param> {
            self.0.params()
        }
        fn params_mut(&mut self) -> Vec<&mut Param> {
            self.0.params_mut()
        }
    }

    #[test]
    fn suite_passes_and_lists_each_kind_once() {
        let entries = suite(&mut ChaCha8Rng::seed_from_u64(52), 1.0).unwrap();
        for e in &entries {
            assert!(e.passed(), "{e:?}");
        }
        let mut kinds: Vec<_> = entries.iter().map(|e| e.kind).collect();
        kinds.sort_unstable();
        kinds.dedup();
        assert_eq!(kinds.len(), entries.len());
    }

    #[test]
    fn suite_flags_a_skewed_convolution() {
        let entries = suite(&mut ChaCha8Rng::seed_from_u64(53), 1.1).unwrap();
        let failed: Vec<_> = entries.iter().filter(|e| !e.passed()).map(|e| e.kind).collect();
        assert_eq!(failed, ["conv"]);
    }

    #[test]
    fn a_wrong_backward_pass_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mut layer = Skewed(Conv2d::new(2, 2, 1, 1, &mut rng));
        let x = Tensor::randn(&[1, 2, 5, 5], 1.0, &mut rng);
        let r = grad_check(&mut layer, &x, Mode::Train, &mut rng).unwrap();
        assert!(!r.passed(1e-3), "{r:?}");
        assert!(r.max_rel > 0.05);
    }
}
