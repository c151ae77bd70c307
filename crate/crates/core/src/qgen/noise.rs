//! Additive IID Gaussian pixel noise on the 8-bit intensity scale.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{Canvas, CANVAS_LEN};

/// `CANVAS_LEN` independent draws of `g/255` with `g ~ N(0, sigma8²)`.
pub fn noise_field<R: Rng + ?Sized>(sigma8: f64, rng: &mut R) -> Vec<f32> {
    assert!(sigma8 >= 0.0 && sigma8.is_finite(), "sigma8 must be a finite non-negative value");
    if sigma8 == 0.0 {
        return alloc::vec![0.0; CANVAS_LEN];
    }
    let normal = Normal::new(0.0, sigma8).expect("valid normal");
    (0..CANVAS_LEN).map(|_| (normal.sample(rng) / 255.0) as f32).collect()
}

/// `v ← clamp(v + g/255, 0, 1)` per channel, stored back at 8 bits.
pub fn add_noise<R: Rng + ?Sized>(canvas: &Canvas, sigma8: f64, rng: &mut R) -> Canvas {
    if sigma8 == 0.0 {
        return canvas.clone();
    }
    let field = noise_field(sigma8, rng);
    let mut out = canvas.clone();
    for (b, n) in out.bytes_mut().iter_mut().zip(field) {
        let v = (*b as f32 / 255.0 + n).clamp(0.0, 1.0);
        *b = libm::roundf(v * 255.0) as u8;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rasterize, sample_shape, WHITE};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene() -> Canvas {
        rasterize(&[sample_shape(&mut ChaCha8Rng::seed_from_u64(1), None)], WHITE)
    }

    #[test]
    fn zero_sigma_is_identity() {
        let c = scene();
        assert_eq!(add_noise(&c, 0.0, &mut ChaCha8Rng::seed_from_u64(2)), c);
    }

    #[test]
    fn sigma_99_field_has_expected_spread() {
        let f = noise_field(99.0, &mut ChaCha8Rng::seed_from_u64(3));
        let n = f.len() as f64;
        let mean = f.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = f.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 99.0 / 255.0;
        assert!((var.sqrt() - target).abs() / target < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn noisy_values_stay_in_range_and_change_pixels() {
        let c = scene();
        let noisy = add_noise(&c, 99.0, &mut ChaCha8Rng::seed_from_u64(4));
        assert!(noisy.intensities().all(|v| (0.0..=1.0).contains(&v)));
        assert!(noisy.mse(&c) > 0.05);
    }
}
