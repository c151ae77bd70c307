//! Per-channel standardization of canvases into network inputs.
//!
//! Tensors use channel-major (CHW) layout; canvases are stored HWC.

use alloc::vec::Vec;

use crate::geometry::{Canvas, CANVAS_LEN, CANVAS_SIZE, CHANNELS};

const PLANE: usize = CANVAS_SIZE * CANVAS_SIZE;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationStats {
    pub mean: [f32; CHANNELS],
    pub std: [f32; CHANNELS],
}

impl NormalizationStats {
    /// Mean 0, std 1: normalization leaves intensities unchanged.
    pub const IDENTITY: NormalizationStats = NormalizationStats {
        mean: [0.0; CHANNELS],
        std: [1.0; CHANNELS],
    };

    /// `None` unless every std is finite and positive.
    pub fn new(mean: [f32; CHANNELS], std: [f32; CHANNELS]) -> Option<Self> {
        let ok = mean.iter().all(|m| m.is_finite()) && std.iter().all(|s| s.is_finite() && *s > 0.0);
        ok.then_some(Self { mean, std })
    }
}

/// Writes the normalized canvas into `out[..CANVAS_LEN]` in CHW order.
pub fn normalize_into(canvas: &Canvas, stats: &NormalizationStats, out: &mut [f32]) {
    let bytes = canvas.as_bytes();
    for p in 0..PLANE {
        for c in 0..CHANNELS {
            let v = bytes[p * CHANNELS + c] as f32 / 255.0;
            out[c * PLANE + p] = (v - stats.mean[c]) / stats.std[c];
        }
    }
}

pub fn normalize(canvas: &Canvas, stats: &NormalizationStats) -> Vec<f32> {
    let mut out = alloc::vec![0.0; CANVAS_LEN];
    normalize_into(canvas, stats, &mut out);
    out
}

/// Inverse of [`normalize`]: CHW values back to unclamped intensities, CHW.
pub fn denormalize(values: &[f32], stats: &NormalizationStats) -> Vec<f32> {
    assert_eq!(values.len(), CANVAS_LEN);
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / PLANE;
            v * stats.std[c] + stats.mean[c]
        })
        .collect()
}

/// Denormalizes, clamps to `[0, 1]` and quantizes to a canvas.
pub fn denormalize_to_canvas(values: &[f32], stats: &NormalizationStats) -> Canvas {
    let plain = denormalize(values, stats);
    let mut bytes = alloc::vec![0u8; CANVAS_LEN];
    for p in 0..PLANE {
        for c in 0..CHANNELS {
            bytes[p * CHANNELS + c] = libm::roundf(plain[c * PLANE + p].clamp(0.0, 1.0) * 255.0) as u8;
        }
    }
    Canvas::from_bytes(bytes).expect("canvas-sized buffer")
}
