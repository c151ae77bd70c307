use alloc::vec::Vec;

use super::{shape_error, NnError, Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one pair per parameter, plus the
/// step count used for bias correction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, state: AdamState::default() }
    }

    /// One bias-corrected update of every parameter from its gradient. The
    /// parameter list must have the same order and shapes on every call.
    pub fn step(&mut self, params: Vec<&mut Param>, lr: f32) -> Result<(), NnError> {
        let st = &mut self.state;
        if st.m.is_empty() {
            st.m = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            st.v = st.m.clone();
        }
        if st.m.len() != params.len() {
            return Err(shape_error("adam", &[st.m.len()], &[params.len()]));
        }
        if let Some((p, m)) = params.iter().zip(&st.m).find(|(p, m)| p.value.shape() != m.shape()) {
            return Err(shape_error("adam", m.shape(), p.value.shape()));
        }
        st.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - libm::pow(beta1 as f64, st.step as f64);
        let c2 = 1.0 - libm::pow(beta2 as f64, st.step as f64);
        for ((p, m), v) in params.into_iter().zip(&mut st.m).zip(&mut st.v) {
            let values = p.value.data_mut();
            for (i, &g) in p.grad.data().iter().enumerate() {
                let mi = &mut m.data_mut()[i];
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                let vi = &mut v.data_mut()[i];
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                let mhat = *mi as f64 / c1;
                let vhat = *vi as f64 / c2;
                values[i] -= (lr as f64 * mhat / (vhat.sqrt() + eps as f64)) as f32;
            }
        }
        Ok(())
    }
}

/// Step decay: the rate is divided by `divisor` every `every` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub every: usize,
    pub divisor: f64,
}

impl LrSchedule {
    pub fn new(base: f64) -> Self {
        Self { base, every: 100, divisor: 10.0 }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        let k = (epoch / self.every.max(1)) as i32;
        self.base / libm::pow(self.divisor, k as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        // With bias correction the first update is lr·g/(|g| + eps).
        let mut p = Param::new("w", Tensor::from_vec(&[3], alloc::vec![1.0, 1.0, 1.0]).unwrap());
        p.grad = Tensor::from_vec(&[3], alloc::vec![0.5, -2.0, 0.0]).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(alloc::vec![&mut p], 0.1).unwrap();
        let d = p.value.data();
        assert!((d[0] - 0.9).abs() < 1e-6 && (d[1] - 1.1).abs() < 1e-6);
        assert_eq!(d[2], 1.0);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut p = Param::new("w", Tensor::from_vec(&[2], alloc::vec![3.0, -4.0]).unwrap());
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..2000 {
            let g: Vec<f32> = p.value.data().iter().map(|x| 2.0 * x).collect();
            p.grad = Tensor::from_vec(&[2], g).unwrap();
            adam.step(alloc::vec![&mut p], 0.01).unwrap();
        }
        assert!(p.value.data().iter().all(|x| x.abs() < 0.05), "{:?}", p.value.data());
    }

    #[test]
    fn mismatched_parameter_lists_are_rejected() {
        let mut a = Param::new("a", Tensor::zeros(&[2]));
        let mut b = Param::new("b", Tensor::zeros(&[3]));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(alloc::vec![&mut a], 0.1).unwrap();
        assert!(adam.step(alloc::vec![&mut b], 0.1).is_err());
    }

    #[test]
    fn schedule_divides_by_ten_every_hundred_epochs() {
        let s = LrSchedule::new(2e-4);
        assert_eq!(s.at(0), 2e-4);
        assert_eq!(s.at(99), 2e-4);
        assert_eq!(s.at(100), 2e-4 / 10.0);
        assert_eq!(s.at(250), 2e-4 / 100.0);
        assert!((s.at(250) - 0.01 * 2e-4).abs() < 1e-18);
    }
}
