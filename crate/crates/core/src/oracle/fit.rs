//! Hypothesis fitting: which family's rule, with which parameter, explains
//! frame two from frame one.

use alloc::vec::Vec;
use core::f64::consts::TAU;

use super::imaging::{components, dominant_color, InkField, InkMap, Inverse, COLOR_TOLERANCE};
use crate::geometry::{Canvas, PlanarTransform, Rgb, CANVAS_LEN, CANVAS_SIZE, CENTER, CHANNELS};
use crate::qgen::{QuestionFamily, BACKGROUND};

const N: usize = CANVAS_SIZE;
const PLANE: usize = N * N;
const DEG: f64 = TAU / 360.0;

/// Residual charged for a structural mismatch (wrong count change, wrong
/// color behaviour). Far above any pixel residual of a true fit.
pub const STRUCTURAL_PENALTY: f64 = 1.0;
/// Interior fraction below which a shape counts as a stroked squiggle.
const STROKE_INTERIOR: f64 = 0.2;
/// Search range of the scale fit.
pub const SCALE_SEARCH: (f64, f64) = (0.4, 2.5);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitParams {
    Rotation { theta: f64 },
    /// `rotate(θ) ∘ reflect`.
    Reflection { theta: f64 },
    Size { mu: f64 },
    /// Every frame keeps the previous frame's shapes, repainted in `color`,
    /// and adds `count_delta` more.
    Accumulate { count_delta: isize, color: Rgb },
    /// The third frame is the first frame's shape in the second frame's color.
    Recolor { color: Rgb },
    /// `im4 = im3 ∪ (im2 ∖ im1)`.
    Addition,
}

impl FitParams {
    pub fn transform(&self) -> Option<PlanarTransform> {
        match *self {
            FitParams::Rotation { theta } => Some(PlanarTransform::rotation(theta)),
            FitParams::Reflection { theta } => Some(PlanarTransform::reflection(theta)),
            FitParams::Size { mu } => Some(PlanarTransform::scaling(mu)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypothesis {
    pub family: QuestionFamily,
    pub params: FitParams,
    /// How badly the rule explains the context; 0 is a perfect fit.
    pub residual: f64,
}

/// Fits `family`'s rule to a frame sequence. Two-frame families use the
/// last two frames; addition needs three.
pub fn fit(family: QuestionFamily, frames: &[Canvas]) -> Hypothesis {
    assert!(frames.len() >= 2, "need at least two frames");
    let pair = Pair::new(&frames[frames.len() - 2], &frames[frames.len() - 1]);
    fit_pair(family, frames, &pair)
}

pub(crate) fn fit_pair(family: QuestionFamily, frames: &[Canvas], pair: &Pair) -> Hypothesis {
    use QuestionFamily::*;
    let (params, residual) = match family {
        RotationPolygon | RotationSquiggle => {
            let (theta, r) = pair.fit_angle(false);
            (FitParams::Rotation { theta }, r)
        }
        Reflection => {
            let (theta, r) = pair.fit_angle(true);
            (FitParams::Reflection { theta }, r)
        }
        Size => {
            let (mu, r) = pair.fit_scale();
            (FitParams::Size { mu }, r)
        }
        Number => pair.fit_accumulate(false),
        Color => {
            let acc = pair.fit_accumulate(true);
            let rec = pair.fit_recolor();
            if rec.1 < acc.1 {
                rec
            } else {
                acc
            }
        }
        Addition => fit_addition(frames),
    };
    Hypothesis { family, params, residual }
}

/// Whether a frame's ink looks like a two-pixel stroke rather than a fill.
pub fn is_stroke(canvas: &Canvas) -> bool {
    InkMap::new(canvas, BACKGROUND).interior_fraction() < STROKE_INTERIOR
}

fn fit_addition(frames: &[Canvas]) -> (FitParams, f64) {
    if frames.len() < 3 {
        return (FitParams::Addition, f64::INFINITY);
    }
    // Outside the added pixels frame two must repeat frame one.
    let (im1, im2) = (&frames[frames.len() - 3], &frames[frames.len() - 2]);
    let bg = BACKGROUND.to_bytes();
    let mut err = 0u64;
    for y in 0..N {
        for x in 0..N {
            let (a, b) = (im1.pixel(x, y), im2.pixel(x, y));
            if b != bg && b != a {
                continue;
            }
            for c in 0..CHANNELS {
                let d = a[c] as i64 - b[c] as i64;
                err += (d * d) as u64;
            }
        }
    }
    (FitParams::Addition, err as f64 / (255.0 * 255.0) / CANVAS_LEN as f64)
}

/// Two consecutive frames with the derived images the fits share.
pub(crate) struct Pair<'a> {
    pub f1: &'a Canvas,
    pub f2: &'a Canvas,
    pub ink1: InkField,
    pub ink2: InkField,
    blur1: InkField,
    blur2: InkField,
    extent1: f64,
    extent2: f64,
}

impl<'a> Pair<'a> {
    pub(crate) fn new(f1: &'a Canvas, f2: &'a Canvas) -> Self {
        let ink1 = InkField::from_canvas(f1);
        let ink2 = InkField::from_canvas(f2);
        let (blur1, blur2) = (ink1.blurred(), ink2.blurred());
        let extent1 = InkMap::new(f1, BACKGROUND).extent_from(CENTER);
        let extent2 = InkMap::new(f2, BACKGROUND).extent_from(CENTER);
        Self { f1, f2, ink1, ink2, blur1, blur2, extent1, extent2 }
    }

    /// Mean squared difference between blurred frame two and blurred frame
    /// one moved by `t`, over the whole canvas. Only a window around the
    /// pivot can hold ink, so only that window is visited.
    pub(crate) fn residual(&self, t: &PlanarTransform) -> f64 {
        let reach = (self.extent1 * t.mu()).max(self.extent2) + 3.5;
        let lo = libm::floor(CENTER.x - reach).max(0.0) as usize;
        let hi = (libm::ceil(CENTER.x + reach) as usize).min(N);
        let inv = Inverse::new(t);
        let mut inside = 0.0f64;
        for y in lo..hi {
            for x in lo..hi {
                let (sx, sy) = inv.apply(x as f64 + 0.5, y as f64 + 0.5);
                for c in 0..CHANNELS {
                    let d = (self.blur1.sample(c, sx, sy) - self.blur2.data[c * PLANE + y * N + x]) as f64;
                    inside += d * d;
                }
            }
        }
        inside / CANVAS_LEN as f64
    }

    /// [`Pair::residual`] plus the mirror-image comparison: frame two pulled
    /// back by `t` against frame one. Interpolation bias of the two
    /// directions largely cancels.
    pub(crate) fn residual_sym(&self, t: &PlanarTransform) -> f64 {
        let reach = self.extent1.max(self.extent2 / t.mu()) + 3.5;
        let lo = libm::floor(CENTER.x - reach).max(0.0) as usize;
        let hi = (libm::ceil(CENTER.x + reach) as usize).min(N);
        let (s, c) = (libm::sin(t.theta()), libm::cos(t.theta()));
        let p = t.pivot();
        let mut back = 0.0f64;
        for y in lo..hi {
            for x in lo..hi {
                let mut dx = (x as f64 + 0.5 - p.x) * t.mu();
                let dy = (y as f64 + 0.5 - p.y) * t.mu();
                if t.reflect() {
                    dx = -dx;
                }
                let (sx, sy) = (p.x + c * dx - s * dy, p.y + s * dx + c * dy);
                for ch in 0..CHANNELS {
                    let d = (self.blur2.sample(ch, sx, sy) - self.blur1.data[ch * PLANE + y * N + x]) as f64;
                    back += d * d;
                }
            }
        }
        self.residual(t) + back / CANVAS_LEN as f64
    }

    /// Best θ on a 1° grid, refined by golden-section search to 0.01°.
    fn fit_angle(&self, reflect: bool) -> (f64, f64) {
        let t = |theta: f64| {
            if reflect {
                PlanarTransform::reflection(theta)
            } else {
                PlanarTransform::rotation(theta)
            }
        };
        let mut best = (0.0, f64::INFINITY);
        for k in 0..360 {
            let theta = k as f64 * DEG;
            let r = self.residual(&t(theta));
            if r < best.1 {
                best = (theta, r);
            }
        }
        let (theta, _) = golden_min(|a| self.residual_sym(&t(a)), best.0 - DEG, best.0 + DEG, 0.01 * DEG);
        let r = self.residual(&t(theta));
        let theta = crate::geometry::normalize_angle(theta);
        if r < best.1 {
            (theta, r)
        } else {
            best
        }
    }

    /// Best μ on a logarithmic grid over `SCALE_SEARCH`, refined by
    /// golden-section search.
    fn fit_scale(&self) -> (f64, f64) {
        const STEPS: usize = 64;
        let (lo, hi) = (libm::log(SCALE_SEARCH.0), libm::log(SCALE_SEARCH.1));
        let step = (hi - lo) / STEPS as f64;
        let at = |k: usize| libm::exp(lo + step * k as f64);
        let mut best = (0, f64::INFINITY);
        for k in 0..=STEPS {
            let r = self.residual(&PlanarTransform::scaling(at(k)));
            if r < best.1 {
                best = (k, r);
            }
        }
        let a = at(best.0.saturating_sub(1));
        let b = at((best.0 + 1).min(STEPS));
        let (mu, r) = golden_min(|m| self.residual(&PlanarTransform::scaling(m)), a, b, 1e-4);
        if r < best.1 {
            (mu, r)
        } else {
            (at(best.0), best.1)
        }
    }

    /// Frame two keeps frame one's footprint (repainted if `recolor`) and
    /// adds shapes.
    fn fit_accumulate(&self, recolor: bool) -> (FitParams, f64) {
        let c1 = dominant_color(self.f1, BACKGROUND);
        let c2 = dominant_color(self.f2, BACKGROUND);
        let (Some(c1), Some(c2)) = (c1, c2) else {
            return (FitParams::Accumulate { count_delta: 0, color: BACKGROUND }, f64::INFINITY);
        };
        let n1 = components(&InkMap::new(self.f1, BACKGROUND)).len() as isize;
        let n2 = components(&InkMap::new(self.f2, BACKGROUND)).len() as isize;
        let delta = n2 - n1;
        let changed = c1.max_channel_diff(c2) > COLOR_TOLERANCE;
        let mut residual = persistence_error(self.f1, self.f2, recolor.then_some(c2));
        if delta != 1 {
            residual += STRUCTURAL_PENALTY;
        }
        if changed != recolor {
            residual += STRUCTURAL_PENALTY;
        }
        (FitParams::Accumulate { count_delta: delta, color: c2 }, residual)
    }

    fn fit_recolor(&self) -> (FitParams, f64) {
        let c1 = dominant_color(self.f1, BACKGROUND);
        let c2 = dominant_color(self.f2, BACKGROUND);
        let (Some(c1), Some(c2)) = (c1, c2) else {
            return (FitParams::Recolor { color: BACKGROUND }, f64::INFINITY);
        };
        let n1 = components(&InkMap::new(self.f1, BACKGROUND)).len();
        let n2 = components(&InkMap::new(self.f2, BACKGROUND)).len();
        let mut residual = 0.0;
        if c1.max_channel_diff(c2) <= COLOR_TOLERANCE {
            residual += STRUCTURAL_PENALTY;
        }
        if n1 != n2 {
            residual += STRUCTURAL_PENALTY;
        }
        (FitParams::Recolor { color: c2 }, residual)
    }
}

/// Squared error, over the ink pixels of `before`, between `before`
/// (optionally repainted in `paint`) and `after`; normalized like a
/// full-canvas MSE.
pub(crate) fn persistence_error(before: &Canvas, after: &Canvas, paint: Option<Rgb>) -> f64 {
    let ink = InkMap::new(before, BACKGROUND);
    let paint = paint.map(Rgb::to_bytes);
    let mut err = 0u64;
    for i in ink.indices() {
        let (x, y) = (i % N, i / N);
        let want = paint.unwrap_or_else(|| before.pixel(x, y));
        let got = after.pixel(x, y);
        for c in 0..CHANNELS {
            let d = want[c] as i64 - got[c] as i64;
            err += (d * d) as u64;
        }
    }
    err as f64 / (255.0 * 255.0) / CANVAS_LEN as f64
}

/// Golden-section minimization of `f` on `[a, b]` down to bracket width `tol`.
pub(crate) fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Refits a geometric family's parameter jointly over a whole sequence
/// (context frames followed by the answer): every consecutive pair, plus the
/// first-to-last pair under the composed transform where it is not the
/// identity. Starts from [`fit`] on the context; other families return it
/// unchanged.
pub fn fit_sequence(family: QuestionFamily, frames: &[Canvas]) -> Hypothesis {
    use QuestionFamily::*;
    let context = &frames[..frames.len() - 1];
    let first = fit(family, context);
    if frames.len() < 3 || !matches!(family, RotationPolygon | RotationSquiggle | Reflection | Size) {
        return first;
    }
    let last = frames.len() - 1;
    let mut pairs: Vec<(Pair, i32)> = (0..last).map(|i| (Pair::new(&frames[i], &frames[i + 1]), 1)).collect();
    if family != Reflection {
        pairs.push((Pair::new(&frames[0], &frames[last]), last as i32));
    }
    let cost = |p: f64| -> f64 {
        pairs
            .iter()
            .map(|(pair, k)| {
                let t = match family {
                    Reflection => PlanarTransform::reflection(p),
                    Size => PlanarTransform::scaling(libm::pow(p, *k as f64)),
                    _ => PlanarTransform::rotation(p * *k as f64),
                };
                pair.residual_sym(&t)
            })
            .sum()
    };
    let (start, width, step) = match first.params {
        FitParams::Rotation { theta } | FitParams::Reflection { theta } => (theta, 4.0 * DEG, 0.25 * DEG),
        FitParams::Size { mu } => (mu, 0.08 * mu, 0.01 * mu),
        _ => return first,
    };
    let steps = libm::round(width / step) as i32;
    let mut best = (start, f64::INFINITY);
    for k in -steps..=steps {
        let p = start + k as f64 * step;
        let c = cost(p);
        if c < best.1 {
            best = (p, c);
        }
    }
    let (p, _) = golden_min(cost, best.0 - step, best.0 + step, step * 1e-3);
    let params = match first.params {
        FitParams::Rotation { .. } => FitParams::Rotation { theta: crate::geometry::normalize_angle(p) },
        FitParams::Reflection { .. } => FitParams::Reflection { theta: crate::geometry::normalize_angle(p) },
        _ => FitParams::Size { mu: p },
    };
    Hypothesis { family, params, residual: first.residual }
}

/// Every family's fit, in enum order.
pub fn fit_all(frames: &[Canvas]) -> Vec<Hypothesis> {
    let pair = Pair::new(&frames[frames.len() - 2], &frames[frames.len() - 1]);
    QuestionFamily::ALL.iter().map(|&f| fit_pair(f, frames, &pair)).collect()
}
