use super::{shape_error, softmax, NnError, Tensor};

/// Mean cross-entropy of `N×K` logits against integer labels, with the
/// gradient `(softmax − onehot)/N`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), NnError> {
    let [n, k] = *logits.shape() else {
        return Err(shape_error("cross_entropy", &[labels.len(), 0], logits.shape()));
    };
    if n != labels.len() || n == 0 {
        return Err(shape_error("cross_entropy", &[labels.len(), k], logits.shape()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(NnError::Label { label, classes: k });
    }
    let mut grad = softmax(logits)?;
    let mut loss = 0.0f64;
    for (s, &label) in labels.iter().enumerate() {
        let row = &logits.data()[s * k..(s + 1) * k];
        let m = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = m + libm::log(row.iter().map(|&v| libm::exp(v as f64 - m)).sum::<f64>());
        loss += lse - row[label] as f64;
        grad.data_mut()[s * k + label] -= 1.0;
    }
    let scale = 1.0 / n as f32;
    grad.data_mut().iter_mut().for_each(|g| *g *= scale);
    Ok((loss / n as f64, grad))
}

/// Mean squared error over every element, with gradient `2(p − t)/M`.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor), NnError> {
    if pred.shape() != target.shape() {
        return Err(shape_error("mse", target.shape(), pred.shape()));
    }
    let m = pred.len().max(1) as f64;
    let mut grad = pred.clone();
    let mut sum = 0.0f64;
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        sum += (d as f64) * (d as f64);
        *g = (2.0 * d as f64 / m) as f32;
    }
    Ok((sum / m, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits_cost_log_k() {
        let (loss, grad) = softmax_cross_entropy(&Tensor::zeros(&[2, 4]), &[0, 3]).unwrap();
        assert!((loss - libm::log(4.0)).abs() < 1e-12);
        assert!((grad.data()[0] - (0.25 - 1.0) / 2.0).abs() < 1e-7);
        assert!((grad.data()[1] - 0.125).abs() < 1e-7);
    }

    #[test]
    fn bad_labels_are_rejected() {
        assert_eq!(
            softmax_cross_entropy(&Tensor::zeros(&[1, 4]), &[4]).unwrap_err(),
            NnError::Label { label: 4, classes: 4 }
        );
        assert!(softmax_cross_entropy(&Tensor::zeros(&[2, 4]), &[0]).is_err());
    }

    proptest! {
        #[test]
        fn cross_entropy_gradient_matches_differences(v in proptest::collection::vec(-5.0f32..5.0, 8), l0 in 0usize..4, l1 in 0usize..4) {
            let x = Tensor::from_vec(&[2, 4], v).unwrap();
            let (_, g) = softmax_cross_entropy(&x, &[l0, l1]).unwrap();
            let h = 1e-2f32;
            for i in 0..8 {
                let mut p = x.clone();
                p.data_mut()[i] += h;
                let mut m = x.clone();
                m.data_mut()[i] -= h;
                let num = ((softmax_cross_entropy(&p, &[l0, l1]).unwrap().0 - softmax_cross_entropy(&m, &[l0, l1]).unwrap().0) / (2.0 * h as f64)) as f32;
                prop_assert!((num - g.data()[i]).abs() < 2e-3, "{} vs {}", num, g.data()[i]);
            }
        }

        #[test]
        fn mse_is_nonnegative_and_zero_on_equal(v in proptest::collection::vec(-3.0f32..3.0, 6), w in proptest::collection::vec(-3.0f32..3.0, 6)) {
            let a = Tensor::from_vec(&[6], v).unwrap();
            let b = Tensor::from_vec(&[6], w).unwrap();
            prop_assert!(mse(&a, &b).unwrap().0 >= 0.0);
            prop_assert_eq!(mse(&a, &a).unwrap().0, 0.0);
        }
    }

    #[test]
    fn mse_gradient_is_scaled_difference() {
        let p = Tensor::from_vec(&[2], alloc::vec![1.0, 3.0]).unwrap();
        let t = Tensor::from_vec(&[2], alloc::vec![0.0, 1.0]).unwrap();
        let (l, g) = mse(&p, &t).unwrap();
        assert_eq!(l, 2.5);
        assert_eq!(g.data(), [1.0, 2.0]);
    }
}
