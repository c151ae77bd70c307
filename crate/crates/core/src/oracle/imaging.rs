//! Pixel-level tools the solver works with: ink masks, connected
//! components, and a floating-point "ink" image that can be blurred and
//! warped with bilinear sampling.

use alloc::vec::Vec;

use crate::geometry::{Canvas, PlanarTransform, Point, Rgb, CANVAS_SIZE, CHANNELS};

const N: usize = CANVAS_SIZE;
const PLANE: usize = N * N;

/// Per-channel tolerance when comparing colors.
pub const COLOR_TOLERANCE: f32 = 0.1;

/// Which pixels differ from the background.
#[derive(Debug, Clone, PartialEq)]
pub struct InkMap {
    mask: Vec<bool>,
}

impl InkMap {
    pub fn new(canvas: &Canvas, background: Rgb) -> Self {
        let mask = (0..PLANE)
            .map(|i| canvas.rgb(i % N, i / N).max_channel_diff(background) > COLOR_TOLERANCE)
            .collect();
        Self { mask }
    }

    pub fn is_ink(&self, x: usize, y: usize) -> bool {
        self.mask[y * N + x]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Largest distance from `p` to the center of an ink pixel.
    pub fn extent_from(&self, p: Point) -> f64 {
        self.indices()
            .map(|i| Point::new((i % N) as f64 + 0.5, (i / N) as f64 + 0.5).distance(&p))
            .fold(0.0, f64::max)
    }

    /// Fraction of ink pixels whose whole diamond of radius 2 is ink.
    /// Filled shapes score high; strokes a few pixels wide score near zero.
    pub fn interior_fraction(&self) -> f64 {
        let total = self.count();
        if total == 0 {
            return 0.0;
        }
        let interior = self
            .indices()
            .filter(|&i| {
                let (x, y) = ((i % N) as isize, (i / N) as isize);
                (-2isize..=2).all(|dy| {
                    let r = 2 - dy.abs();
                    (-r..=r).all(|dx| {
                        let (xx, yy) = (x + dx, y + dy);
                        xx >= 0 && yy >= 0 && xx < N as isize && yy < N as isize
                            && self.mask[yy as usize * N + xx as usize]
                    })
                })
            })
            .count();
        interior as f64 / total as f64
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }
}

/// A 4-connected group of ink pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// Row-major pixel indices, sorted.
    pub pixels: Vec<usize>,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn mean_color(&self, canvas: &Canvas) -> Rgb {
        let mut acc = [0.0f64; CHANNELS];
        for &i in &self.pixels {
            for (a, v) in acc.iter_mut().zip(canvas.rgb(i % N, i / N).channels()) {
                *a += v as f64;
            }
        }
        let n = self.pixels.len().max(1) as f64;
        Rgb::new((acc[0] / n) as f32, (acc[1] / n) as f32, (acc[2] / n) as f32)
    }
}

/// Connected components with 4-connectivity, ordered by their first pixel.
pub fn components(ink: &InkMap) -> Vec<Component> {
    let mut label = alloc::vec![false; PLANE];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..PLANE {
        if !ink.mask[start] || label[start] {
            continue;
        }
        label[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            pixels.push(i);
            let (x, y) = (i % N, i / N);
            let mut visit = |j: usize| {
                if ink.mask[j] && !label[j] {
                    label[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < N {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - N);
            }
            if y + 1 < N {
                visit(i + N);
            }
        }
        pixels.sort_unstable();
        out.push(Component { pixels });
    }
    out
}

/// The most common ink color, snapped to the first color within tolerance
/// of it; `None` for a blank frame.
pub fn dominant_color(canvas: &Canvas, background: Rgb) -> Option<Rgb> {
    let mut counts: Vec<([u8; 3], usize)> = Vec::new();
    for i in 0..PLANE {
        let px = canvas.pixel(i % N, i / N);
        if Rgb::from_bytes(px).max_channel_diff(background) <= COLOR_TOLERANCE {
            continue;
        }
        match counts.iter_mut().find(|(c, _)| *c == px) {
            Some((_, n)) => *n += 1,
            None => counts.push((px, 1)),
        }
    }
    counts
        .iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(c, _)| Rgb::from_bytes(*c))
}

/// Planar float image of `1 − intensity` per channel, so the background is
/// zero and samples outside the canvas read as background.
#[derive(Debug, Clone, PartialEq)]
pub struct InkField {
    pub data: Vec<f32>,
}

impl InkField {
    pub fn zeros() -> Self {
        Self { data: alloc::vec![0.0; CHANNELS * PLANE] }
    }

    pub fn from_canvas(canvas: &Canvas) -> Self {
        let bytes = canvas.as_bytes();
        let mut data = alloc::vec![0.0; CHANNELS * PLANE];
        for p in 0..PLANE {
            for c in 0..CHANNELS {
                data[c * PLANE + p] = 1.0 - bytes[p * CHANNELS + c] as f32 / 255.0;
            }
        }
        Self { data }
    }

    /// Separable binomial blur `[1 4 6 4 1] / 16` (σ = 1), zero padded.
    pub fn blurred(&self) -> Self {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let mut tmp = Self::zeros();
        let mut out = Self::zeros();
        for c in 0..CHANNELS {
            let src = &self.data[c * PLANE..(c + 1) * PLANE];
            let mid = &mut tmp.data[c * PLANE..(c + 1) * PLANE];
            for y in 0..N {
                for x in 0..N {
                    let mut acc = 0.0;
                    for (k, w) in K.iter().enumerate() {
                        let xx = x as isize + k as isize - 2;
                        if (0..N as isize).contains(&xx) {
                            acc += w * src[y * N + xx as usize];
                        }
                    }
                    mid[y * N + x] = acc;
                }
            }
            let dst = &mut out.data[c * PLANE..(c + 1) * PLANE];
            for y in 0..N {
                for x in 0..N {
                    let mut acc = 0.0;
                    for (k, w) in K.iter().enumerate() {
                        let yy = y as isize + k as isize - 2;
                        if (0..N as isize).contains(&yy) {
                            acc += w * mid[yy as usize * N + x];
                        }
                    }
                    dst[y * N + x] = acc;
                }
            }
        }
        out
    }

    /// Bilinear sample of channel `c` at continuous canvas coordinates
    /// (pixel `(i, j)` has its center at `(i + ½, j + ½)`).
    #[inline]
    pub fn sample(&self, c: usize, x: f64, y: f64) -> f32 {
        let u = x - 0.5;
        let v = y - 0.5;
        let (x0, y0) = (libm::floor(u), libm::floor(v));
        let (fx, fy) = ((u - x0) as f32, (v - y0) as f32);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let plane = &self.data[c * PLANE..(c + 1) * PLANE];
        let at = |xx: isize, yy: isize| -> f32 {
            if xx < 0 || yy < 0 || xx >= N as isize || yy >= N as isize {
                0.0
            } else {
                plane[yy as usize * N + xx as usize]
            }
        };
        let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
        let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// The image moved by `t`: output pixel `p` reads the source at `t⁻¹(p)`.
    pub fn warped(&self, t: &PlanarTransform) -> Self {
        let mut out = Self::zeros();
        self.warp_window_into(t, (0, N), &mut out);
        out
    }

    /// Warps only the pixels with both coordinates in `window`.
    pub fn warp_window_into(&self, t: &PlanarTransform, window: (usize, usize), out: &mut InkField) {
        let inv = Inverse::new(t);
        for y in window.0..window.1 {
            for x in window.0..window.1 {
                let (sx, sy) = inv.apply(x as f64 + 0.5, y as f64 + 0.5);
                for c in 0..CHANNELS {
                    out.data[c * PLANE + y * N + x] = self.sample(c, sx, sy);
                }
            }
        }
    }

    pub fn mse(&self, other: &InkField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = (a - b) as f64;
                d * d
            })
            .sum::<f64>()
            / self.data.len() as f64
    }

    /// Sum of channels at pixel `i`.
    pub fn total(&self, i: usize) -> f32 {
        (0..CHANNELS).map(|c| self.data[c * PLANE + i]).sum()
    }
}

/// Closed-form inverse of a planar transform, precomputed.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Inverse {
    cos: f64,
    sin: f64,
    inv_mu: f64,
    reflect: bool,
    pivot: Point,
}

impl Inverse {
    pub(crate) fn new(t: &PlanarTransform) -> Self {
        Self {
            cos: libm::cos(t.theta()),
            sin: libm::sin(t.theta()),
            inv_mu: 1.0 / t.mu(),
            reflect: t.reflect(),
            pivot: t.pivot(),
        }
    }

    #[inline]
    pub(crate) fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.pivot.x, y - self.pivot.y);
        // Undo the rotation, then the scale, then the mirror.
        let rx = (self.cos * dx + self.sin * dy) * self.inv_mu;
        let ry = (-self.sin * dx + self.cos * dy) * self.inv_mu;
        let rx = if self.reflect { -rx } else { rx };
        (self.pivot.x + rx, self.pivot.y + ry)
    }
}
