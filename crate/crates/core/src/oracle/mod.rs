//! A non-learning solver that inverts the question generator: it fits every
//! family's rule to the context frames, keeps the best-fitting hypothesis,
//! synthesizes the next frame and picks the closest option.
//!
//! The solver only ever sees frames; it never reads a stored answer.

mod fit;
pub mod imaging;

pub use fit::{fit, fit_all, fit_sequence, is_stroke, FitParams, Hypothesis, SCALE_SEARCH, STRUCTURAL_PENALTY};

use alloc::vec::Vec;

use fit::{fit_pair, Pair};
use imaging::{components, InkField, InkMap, Inverse, COLOR_TOLERANCE};

use crate::geometry::{Canvas, PlanarTransform, Rgb, CANVAS_SIZE, CHANNELS};
use crate::qgen::{addition_frame, Question, QuestionFamily, BACKGROUND};

const N: usize = CANVAS_SIZE;
const PLANE: usize = N * N;

/// Per-unit option penalty for a wrong component count or a component in
/// the wrong color, on the mean-squared-intensity scale.
pub const OPTION_PENALTY: f64 = 0.01;

/// A synthesized next frame and what it was built from.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub frame: Canvas,
    pub hypothesis: Hypothesis,
    /// Soft ink estimate behind `frame` for transform hypotheses.
    soft: Option<InkField>,
}

/// The oracle's answer to a multiple-choice question.
#[derive(Debug, Clone)]
pub struct Solution {
    pub index: usize,
    pub distances: [f64; 4],
    pub hypothesis: Hypothesis,
}

/// Context frames of `q` with the blank slot dropped.
pub fn context_frames(q: &Question) -> &[Canvas] {
    if q.context[0].is_uniform(BACKGROUND) {
        &q.context[1..]
    } else {
        &q.context
    }
}

/// Predicts the frame following `frames` (two frames, or three for
/// addition) under the best-fitting hypothesis.
pub fn predict_next(frames: &[Canvas]) -> (Canvas, Hypothesis) {
    let p = predict(frames);
    (p.frame, p.hypothesis)
}

pub fn predict(frames: &[Canvas]) -> Prediction {
    assert!(frames.len() >= 2, "need at least two frames");
    let pair = Pair::new(&frames[frames.len() - 2], &frames[frames.len() - 1]);
    // Rule-based fits are exact when they apply; residuals are never
    // negative, so a zero among them is already the minimum.
    // A third context frame only ever serves addition, so that rule is
    // tried first when one is given.
    let order = if frames.len() >= 3 {
        [QuestionFamily::Addition, QuestionFamily::Number, QuestionFamily::Color]
    } else {
        [QuestionFamily::Number, QuestionFamily::Color, QuestionFamily::Addition]
    };
    let structural = order.map(|f| fit_pair(f, frames, &pair));
    let best = match structural.iter().find(|h| h.residual == 0.0) {
        Some(h) => *h,
        None => QuestionFamily::ALL
            .iter()
            .map(|&f| match structural.iter().find(|h| h.family == f) {
                Some(h) => *h,
                None => fit_pair(f, frames, &pair),
            })
            .fold(None::<Hypothesis>, |acc, h| match acc {
                Some(a) if a.residual <= h.residual => Some(a),
                _ => Some(h),
            })
            .expect("seven hypotheses"),
    };
    let mut hypothesis = best;
    if let FitParams::Rotation { .. } = best.params {
        hypothesis.family = if is_stroke(pair.f2) {
            QuestionFamily::RotationSquiggle
        } else {
            QuestionFamily::RotationPolygon
        };
    }
    render(frames, &pair, hypothesis)
}

fn render(frames: &[Canvas], pair: &Pair, hypothesis: Hypothesis) -> Prediction {
    match hypothesis.params {
        FitParams::Rotation { .. } | FitParams::Reflection { .. } | FitParams::Size { .. } => {
            let t = hypothesis.params.transform().expect("transform hypothesis");
            let soft = extrapolate(pair, &t);
            let frame = crisp(&soft, imaging::dominant_color(pair.f2, BACKGROUND).unwrap_or(BACKGROUND));
            Prediction { frame, hypothesis, soft: Some(soft) }
        }
        FitParams::Recolor { color } => {
            let mut frame = Canvas::filled(BACKGROUND);
            let ink = InkMap::new(pair.f1, BACKGROUND);
            for i in ink.indices() {
                frame.set_pixel(i % N, i / N, color.to_bytes());
            }
            Prediction { frame, hypothesis, soft: None }
        }
        FitParams::Addition => {
            let k = frames.len();
            let frame = addition_frame(&frames[k - 3], &frames[k - 2], &frames[k - 1], BACKGROUND);
            Prediction { frame, hypothesis, soft: None }
        }
        FitParams::Accumulate { count_delta, color } => {
            let frame = accumulate(pair.f2, color, count_delta.max(0) as usize);
            Prediction { frame, hypothesis, soft: None }
        }
    }
}

/// Soft ink of the next frame: frame two moved by `t` and frame one moved
/// by `t²`, averaged. The two sources sample the shape on different pixel
/// grids, so their mean locates edges better than either alone. When `t`
/// magnifies, frame one carries less detail and only frame two is used.
fn extrapolate(pair: &Pair, t: &PlanarTransform) -> InkField {
    let inv = Inverse::new(t);
    let use_first = t.mu() <= 1.0;
    let mut out = InkField::zeros();
    for y in 0..N {
        for x in 0..N {
            let (x1, y1) = inv.apply(x as f64 + 0.5, y as f64 + 0.5);
            let (x2, y2) = inv.apply(x1, y1);
            for c in 0..CHANNELS {
                let a = pair.ink2.sample(c, x1, y1);
                out.data[c * PLANE + y * N + x] = if use_first {
                    0.5 * (a + pair.ink1.sample(c, x2, y2))
                } else {
                    a
                };
            }
        }
    }
    out
}

/// Paints `color` wherever the soft ink covers at least half a pixel.
fn crisp(soft: &InkField, color: Rgb) -> Canvas {
    let ink: [f32; 3] = color.channels().map(|v| 1.0 - v);
    let norm: f32 = ink.iter().map(|v| v * v).sum();
    let mut frame = Canvas::filled(BACKGROUND);
    if norm == 0.0 {
        return frame;
    }
    for i in 0..PLANE {
        let cover: f32 = (0..CHANNELS).map(|c| soft.data[c * PLANE + i] * ink[c]).sum::<f32>() / norm;
        if cover >= 0.5 {
            frame.set_pixel(i % N, i / N, color.to_bytes());
        }
    }
    frame
}

/// Frame two repainted in `color`, plus `extra` copies of its first
/// component dropped at the first free spots in row-major order. Where the
/// new copies go is not determined by the context, so this is a best guess.
fn accumulate(f2: &Canvas, color: Rgb, extra: usize) -> Canvas {
    let ink = InkMap::new(f2, BACKGROUND);
    let comps = components(&ink);
    let mut frame = Canvas::filled(BACKGROUND);
    let mut occupied = alloc::vec![false; PLANE];
    for i in ink.indices() {
        frame.set_pixel(i % N, i / N, color.to_bytes());
        occupied[i] = true;
    }
    let Some(first) = comps.first() else { return frame };
    let (min_x, min_y) = first.pixels.iter().fold((N, N), |(mx, my), &i| (mx.min(i % N), my.min(i / N)));
    let rel: Vec<(usize, usize)> = first.pixels.iter().map(|&i| (i % N - min_x, i / N - min_y)).collect();
    let (w, h) = rel.iter().fold((0, 0), |(w, h), &(x, y)| (w.max(x + 1), h.max(y + 1)));
    const GAP: usize = 2;
    let mut placed = 0;
    'search: for oy in (0..N.saturating_sub(h)).step_by(2) {
        for ox in (0..N.saturating_sub(w)).step_by(2) {
            if placed == extra {
                break 'search;
            }
            let clear = rel.iter().all(|&(x, y)| {
                let (px, py) = (ox + x, oy + y);
                let (x0, x1) = (px.saturating_sub(GAP), (px + GAP).min(N - 1));
                let (y0, y1) = (py.saturating_sub(GAP), (py + GAP).min(N - 1));
                (y0..=y1).all(|yy| (x0..=x1).all(|xx| !occupied[yy * N + xx]))
            });
            if clear {
                for &(x, y) in &rel {
                    frame.set_pixel(ox + x, oy + y, color.to_bytes());
                    occupied[(oy + y) * N + ox + x] = true;
                }
                placed += 1;
            }
        }
    }
    frame
}

/// Distance of one option from the prediction under its hypothesis.
fn option_distance(pred: &Prediction, pair: &Pair, option: &Canvas, blurred_pred: Option<&InkField>) -> f64 {
    match pred.hypothesis.params {
        FitParams::Rotation { .. } | FitParams::Reflection { .. } | FitParams::Size { .. } => {
            let target = blurred_pred.expect("transform prediction");
            InkField::from_canvas(option).blurred().mse(target)
        }
        FitParams::Accumulate { count_delta, color } => {
            // Frame two must survive untouched, the count must grow by the
            // fitted step, and every component must carry the fitted color.
            let comps = components(&InkMap::new(option, BACKGROUND));
            let n2 = components(&InkMap::new(pair.f2, BACKGROUND)).len() as isize;
            let wrong_count = (comps.len() as isize - (n2 + count_delta)).unsigned_abs() as f64;
            let wrong_color = comps
                .iter()
                .filter(|c| c.mean_color(option).max_channel_diff(color) > COLOR_TOLERANCE)
                .count() as f64;
            kept_objects_error(pair.f2, option, &comps) + OPTION_PENALTY * (wrong_count + wrong_color)
        }
        FitParams::Recolor { .. } | FitParams::Addition => option.mse(&pred.frame),
    }
}

/// Squared error between `before` and `after` over `before`'s ink and over
/// every component of `after` that overlaps it: the earlier objects must
/// reappear unchanged, not merely stay covered.
fn kept_objects_error(before: &Canvas, after: &Canvas, after_comps: &[imaging::Component]) -> f64 {
    let ink = InkMap::new(before, BACKGROUND);
    let mut mask = alloc::vec![false; PLANE];
    for i in ink.indices() {
        mask[i] = true;
    }
    for comp in after_comps {
        if comp.pixels.iter().any(|&i| ink.is_ink(i % N, i / N)) {
            for &i in &comp.pixels {
                mask[i] = true;
            }
        }
    }
    let (a, b) = (before.as_bytes(), after.as_bytes());
    let err: u64 = (0..PLANE)
        .filter(|&i| mask[i])
        .flat_map(|i| (0..CHANNELS).map(move |c| i * CHANNELS + c))
        .map(|j| {
            let d = a[j] as i64 - b[j] as i64;
            (d * d) as u64
        })
        .sum();
    err as f64 / (255.0 * 255.0) / crate::geometry::CANVAS_LEN as f64
}

/// Answers a multiple-choice question; ties go to the lowest index.
pub fn solve(question: &Question) -> Solution {
    let frames = context_frames(question);
    let pair = Pair::new(&frames[frames.len() - 2], &frames[frames.len() - 1]);
    let pred = predict(frames);
    let blurred = pred.soft.as_ref().map(InkField::blurred);
    let distances: [f64; 4] =
        core::array::from_fn(|i| option_distance(&pred, &pair, &question.options[i], blurred.as_ref()));
    let index = (0..4).fold(0, |best, i| if distances[i] < distances[best] { i } else { best });
    Solution { index, distances, hypothesis: pred.hypothesis }
}
