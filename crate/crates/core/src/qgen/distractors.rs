//! Wrong options. Every question gets two distractors from its own family
//! with a resampled parameter and one produced by a different family's
//! operation applied to the same context.

use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::Rng;

use super::families::{cell_shape, class_of, color_except, copy_to_cell, pick, sample_scale, CELL_CLASSES};
use super::layout::free_cell;
use super::{Budget, GenerationError, QuestionFamily, QuestionParams, BACKGROUND, MIN_SCALE_GAP, SCALE_RANGE, TAU_SEP};
use crate::geometry::{
    angle_distance, rasterize, sample_segment, Canvas, PlanarTransform, Shape, CENTER,
};

/// Same-family rotation distractors differ from the true angle by at least this.
pub const MIN_ANGLE_GAP: f64 = core::f64::consts::PI / 12.0;

const PATIENCE: usize = 200;

/// Three distractors for `correct`, separated from it and from each other by
/// at least `TAU_SEP`.
pub fn gen_distractors<R: Rng + ?Sized>(
    correct: &Canvas,
    family: QuestionFamily,
    params: &QuestionParams,
    rng: &mut R,
) -> Result<[Canvas; 3], GenerationError> {
    let mut budget = Budget::new(family);
    loop {
        if let Some(d) = distractors_within(correct, params, rng, &mut budget, PATIENCE)? {
            return Ok(d);
        }
    }
}

/// Like [`gen_distractors`] but gives up with `Ok(None)` after `patience`
/// proposals so the caller can resample the question itself. Every
/// proposal is charged to `budget`.
pub(crate) fn distractors_within<R: Rng + ?Sized>(
    correct: &Canvas,
    params: &QuestionParams,
    rng: &mut R,
    budget: &mut Budget,
    patience: usize,
) -> Result<Option<[Canvas; 3]>, GenerationError> {
    let mut accepted: Vec<Canvas> = Vec::with_capacity(3);
    let mut tries = 0;
    while accepted.len() < 3 {
        if tries == patience {
            return Ok(None);
        }
        tries += 1;
        budget.spend()?;
        let same_family = accepted.len() < 2;
        let Some(candidate) = propose(params, same_family, rng) else {
            continue;
        };
        let separated = candidate.mse(correct) >= TAU_SEP
            && accepted.iter().all(|a| candidate.mse(a) >= TAU_SEP);
        if separated {
            accepted.push(candidate);
        }
    }
    let mut it = accepted.into_iter();
    Ok(Some(core::array::from_fn(|_| it.next().expect("three accepted"))))
}

fn render(shapes: &[Shape]) -> Canvas {
    rasterize(shapes, BACKGROUND)
}

fn transformed(shape: &Shape, t: PlanarTransform) -> Option<Canvas> {
    shape.transformed(&t).ok().map(|s| render(&[s]))
}

fn far_angle<R: Rng + ?Sized>(rng: &mut R, from: f64) -> f64 {
    loop {
        let a = rng.random_range(0.0..TAU);
        if angle_distance(a, from) >= MIN_ANGLE_GAP {
            return a;
        }
    }
}

/// One candidate option; `None` when the draw left the canvas.
fn propose<R: Rng + ?Sized>(params: &QuestionParams, same_family: bool, rng: &mut R) -> Option<Canvas> {
    let [_, f2, _] = params.frame_shapes();
    match params {
        QuestionParams::Rotation { theta, .. } => {
            let s2 = &f2[0];
            if same_family {
                transformed(s2, PlanarTransform::rotation(far_angle(rng, *theta)))
            } else if rng.random_bool(0.5) {
                transformed(s2, PlanarTransform::reflection(rng.random_range(0.0..TAU)))
            } else {
                transformed(s2, PlanarTransform::scaling(sample_scale(rng)))
            }
        }
        QuestionParams::Size { mu, .. } => {
            let s2 = &f2[0];
            if same_family {
                let m = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
                if (m - mu).abs() < MIN_SCALE_GAP {
                    return None;
                }
                transformed(s2, PlanarTransform::scaling(m))
            } else {
                // Rotation keeps the size of frame two; an added copy of the
                // shape's reflection breaks symmetric classes like circles.
                let m = if rng.random_bool(0.5) { *mu } else { 1.0 };
                let t = PlanarTransform::about(rng.random_range(0.0..TAU), m, rng.random_bool(0.5), CENTER).ok()?;
                transformed(s2, t)
            }
        }
        QuestionParams::Reflection { theta, .. } => {
            let s2 = &f2[0];
            if same_family {
                // reflection(θ')·S₂ and reflection(θ)·S₂ differ by a rotation
                // of θ−θ', so the rotation gap carries over.
                transformed(s2, PlanarTransform::reflection(far_angle(rng, *theta)))
            } else {
                transformed(s2, PlanarTransform::rotation(far_angle(rng, 0.0)))
            }
        }
        QuestionParams::Number { start, cells, frames } => {
            let answer = &frames[2];
            let class = class_of(&answer[0]);
            let color = answer[0].color;
            if same_family {
                if rng.random_bool(0.5) {
                    // Right count, wrong shape.
                    let other = pick(rng, &CELL_CLASSES.iter().copied().filter(|c| *c != class).collect::<Vec<_>>());
                    let shapes: Vec<Shape> =
                        cells[..start + 2].iter().map(|&c| cell_shape(rng, other, c, color)).collect();
                    Some(render(&shapes))
                } else {
                    // Wrong count: one fewer, or one or two more.
                    let delta: isize = pick(rng, &[-1, 1, 2]);
                    let n = (*start as isize + 2 + delta) as usize;
                    let mut shapes = answer.clone();
                    if n < shapes.len() {
                        shapes.truncate(n);
                    } else {
                        let mut used = cells.clone();
                        while shapes.len() < n {
                            let cell = free_cell(rng, &used)?;
                            used.push(cell);
                            shapes.push(cell_shape(rng, class, cell, color));
                        }
                    }
                    Some(render(&shapes))
                }
            } else {
                // Color rule on the right count.
                let recolor = color_except(rng, &[color]);
                let shapes: Vec<Shape> = answer.iter().map(|s| s.with_color(recolor)).collect();
                Some(render(&shapes))
            }
        }
        QuestionParams::Color { color1, color2, cells, frames } => {
            let answer = &frames[2];
            if same_family {
                let wrong = if rng.random_bool(0.5) { *color1 } else { color_except(rng, &[*color1, *color2]) };
                // Either every copy or a random subset gets the wrong color.
                let all = rng.random_bool(0.5);
                let flip = rng.random_range(0..answer.len());
                let shapes: Vec<Shape> = answer
                    .iter()
                    .enumerate()
                    .map(|(i, s)| if all || i == flip { s.with_color(wrong) } else { s.clone() })
                    .collect();
                Some(render(&shapes))
            } else {
                // Number rule: one more copy in color two.
                let cell = free_cell(rng, cells)?;
                let mut shapes = answer.clone();
                shapes.push(copy_to_cell(&answer[0], cells[0], cell));
                Some(render(&shapes))
            }
        }
        QuestionParams::Addition { base, line, third } => {
            if same_family {
                if rng.random_bool(0.5) {
                    // im3 ∪ im2, forgetting to remove im1.
                    Some(render(&[third.clone(), base.clone(), line.clone()]))
                } else {
                    let other = sample_segment(rng, CENTER, 26.0, 16.0, line.color);
                    Some(render(&[third.clone(), other]))
                }
            } else {
                let t = PlanarTransform::about(far_angle(rng, 0.0), 1.0, rng.random_bool(0.5), CENTER).ok()?;
                let moved = third.transformed(&t).ok()?;
                Some(render(&[moved, line.clone()]))
            }
        }
        QuestionParams::Recolor { .. } => None,
    }
}
