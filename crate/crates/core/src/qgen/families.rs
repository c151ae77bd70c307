use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::Rng;

use super::distractors::distractors_within;
use super::layout::{cell_center, pick_cells, CELL_RADIUS};
use super::{
    Budget, GeneratedOpenQuestion, GeneratedQuestion, GenerationError, OpenQuestion, Question,
    QuestionFamily, QuestionParams, BACKGROUND, MIN_ROTATION, SCALE_EXCLUSION, SCALE_RANGE, TAU_SEP,
};
use crate::oracle::imaging::{components, InkMap};
use crate::geometry::{
    frames_fit, random_palette_color, rasterize, sample_segment, sample_shape, sample_shape_at,
    Canvas, PlanarTransform, Rgb, Shape, ShapeClass, ShapeKind, CENTER, PALETTE,
};

/// Distractor proposals tried for one parameter draw before the parameters
/// themselves are resampled.
const DISTRACTOR_PATIENCE: usize = 60;

/// Generates one multiple-choice question of `family`.
pub fn gen_question<R: Rng + ?Sized>(
    family: QuestionFamily,
    rng: &mut R,
) -> Result<GeneratedQuestion, GenerationError> {
    let mut budget = Budget::new(family);
    loop {
        budget.spend()?;
        let Some(params) = sample_params(family, rng, false) else {
            continue;
        };
        let context = params.render_context();
        let correct = params.render_answer();
        if !well_posed(family, &params, &context[1], &context[2], &correct) {
            continue;
        }
        let Some(distractors) =
            distractors_within(&correct, &params, rng, &mut budget, DISTRACTOR_PATIENCE)?
        else {
            continue;
        };
        let answer_index = rng.random_range(0..4u8);
        let mut wrong = distractors.into_iter();
        let options: [Canvas; 4] = core::array::from_fn(|i| {
            if i == answer_index as usize {
                correct.clone()
            } else {
                wrong.next().expect("three distractors")
            }
        });
        return Ok(GeneratedQuestion {
            question: Question {
                family,
                context,
                options,
                answer_index,
            },
            params,
        });
    }
}

/// Generates one open question of `family`.
pub fn gen_open_question<R: Rng + ?Sized>(
    family: QuestionFamily,
    rng: &mut R,
) -> Result<GeneratedOpenQuestion, GenerationError> {
    if !family.has_open_form() {
        return Err(GenerationError::NoOpenForm { family });
    }
    let mut budget = Budget::new(family);
    loop {
        budget.spend()?;
        let Some(params) = sample_params(family, rng, true) else {
            continue;
        };
        let [s1, s2, s3] = params.frame_shapes();
        let (f1, f2, target) = (
            rasterize(&s1, BACKGROUND),
            rasterize(&s2, BACKGROUND),
            rasterize(&s3, BACKGROUND),
        );
        if !well_posed(family, &params, &f1, &f2, &target) {
            continue;
        }
        return Ok(GeneratedOpenQuestion {
            question: OpenQuestion {
                family,
                context: [f1, f2],
                target,
            },
            params,
        });
    }
}

/// `im4 = im3 ∪ (im2 ∖ im1)`, evaluated pixelwise: a pixel that im2 painted
/// and that differs from im1 is copied from im2, every other pixel from im3.
pub fn addition_frame(im1: &Canvas, im2: &Canvas, im3: &Canvas, background: Rgb) -> Canvas {
    let bg = background.to_bytes();
    let mut out = im3.clone();
    for y in 0..crate::geometry::CANVAS_SIZE {
        for x in 0..crate::geometry::CANVAS_SIZE {
            let p2 = im2.pixel(x, y);
            if p2 != bg && p2 != im1.pixel(x, y) {
                out.set_pixel(x, y, p2);
            }
        }
    }
    out
}

pub(crate) fn sample_angle<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(MIN_ROTATION..=TAU - MIN_ROTATION)
}

pub(crate) fn sample_scale<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let mu = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        if !(SCALE_EXCLUSION.0..=SCALE_EXCLUSION.1).contains(&mu) {
            return mu;
        }
    }
}

pub(crate) fn pick<R: Rng + ?Sized, T: Copy>(rng: &mut R, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

/// A palette color different from every color in `avoid`.
pub(crate) fn color_except<R: Rng + ?Sized>(rng: &mut R, avoid: &[Rgb]) -> Rgb {
    let allowed: Vec<Rgb> = PALETTE
        .iter()
        .copied()
        .filter(|c| !avoid.iter().any(|a| a.approx_eq(*c, 1e-6)))
        .collect();
    pick(rng, &allowed)
}

pub(crate) fn class_of(shape: &Shape) -> ShapeClass {
    match (shape.kind, shape.vertices.len()) {
        (ShapeKind::Circle, _) => ShapeClass::Circle,
        (ShapeKind::Squiggle, _) => ShapeClass::Squiggle,
        (_, 3) => ShapeClass::Triangle,
        _ => ShapeClass::Square,
    }
}

pub(crate) const CELL_CLASSES: [ShapeClass; 3] =
    [ShapeClass::Triangle, ShapeClass::Square, ShapeClass::Circle];

/// A shape for one grid cell. Thin corners can rasterize into pieces that
/// touch only diagonally; those draws are resampled so every exemplar is a
/// single 4-connected blob and counts read off unambiguously.
pub(crate) fn cell_shape<R: Rng + ?Sized>(rng: &mut R, class: ShapeClass, cell: usize, color: Rgb) -> Shape {
    loop {
        let shape = sample_shape_at(rng, class, cell_center(cell), CELL_RADIUS, color);
        if single_blob(&shape) {
            return shape;
        }
    }
}

fn single_blob(shape: &Shape) -> bool {
    let canvas = rasterize(core::slice::from_ref(shape), BACKGROUND);
    components(&InkMap::new(&canvas, BACKGROUND)).len() == 1
}

/// Base circumradius range that keeps every size-family frame (and the
/// distractors built from frame two) between radius 4 and 28.
fn size_radius_range(mu: f64) -> (f64, f64) {
    let lo = (4.0 / (mu * mu).min(1.0)).max(6.0);
    let hi = (28.0 / (mu * mu).max(1.0)).min(22.0);
    (lo, hi)
}

/// Draws the parameters of one question. `None` asks the caller to retry.
fn sample_params<R: Rng + ?Sized>(family: QuestionFamily, rng: &mut R, open: bool) -> Option<QuestionParams> {
    use QuestionFamily::*;
    match family {
        RotationPolygon | RotationSquiggle => {
            let class = if family == RotationSquiggle {
                ShapeClass::Squiggle
            } else {
                pick(rng, &[ShapeClass::Triangle, ShapeClass::Square])
            };
            let shape = sample_shape(rng, Some(class));
            Some(QuestionParams::Rotation {
                shape,
                theta: sample_angle(rng),
            })
        }
        Size => {
            let class = pick(rng, &CELL_CLASSES);
            let mu = sample_scale(rng);
            let color = random_palette_color(rng);
            let shape = sample_shape_at(rng, class, CENTER, size_radius_range(mu), color);
            frames_fit(&shape, &PlanarTransform::scaling(mu), 3).then_some(QuestionParams::Size { shape, mu })
        }
        Reflection => {
            let class = pick(rng, &[ShapeClass::Triangle, ShapeClass::Square, ShapeClass::Squiggle]);
            let shape = sample_shape(rng, Some(class));
            Some(QuestionParams::Reflection {
                shape,
                theta: rng.random_range(0.0..TAU),
            })
        }
        Number => {
            let start = rng.random_range(1..=4usize);
            let class = pick(rng, &CELL_CLASSES);
            let color = random_palette_color(rng);
            let cells = pick_cells(rng, start + 2);
            let shapes: Vec<Shape> = cells.iter().map(|&c| cell_shape(rng, class, c, color)).collect();
            let frames = [
                shapes[..start].to_vec(),
                shapes[..start + 1].to_vec(),
                shapes[..start + 2].to_vec(),
            ];
            Some(QuestionParams::Number { start, cells, frames })
        }
        Color if open => {
            let first = sample_shape(rng, None);
            let color2 = color_except(rng, &[first.color]);
            let second = sample_shape(rng, None).with_color(color2);
            Some(QuestionParams::Recolor { first, second })
        }
        Color => {
            let class = pick(rng, &CELL_CLASSES);
            let color1 = random_palette_color(rng);
            let color2 = color_except(rng, &[color1]);
            let cells = pick_cells(rng, 3);
            let template = cell_shape(rng, class, cells[0], color2);
            let copies: Vec<Shape> = cells.iter().map(|&c| copy_to_cell(&template, cells[0], c)).collect();
            if !copies.iter().all(single_blob) {
                return None;
            }
            let frames = [
                alloc::vec![copies[0].with_color(color1)],
                copies[..2].to_vec(),
                copies.clone(),
            ];
            Some(QuestionParams::Color {
                color1,
                color2,
                cells,
                frames,
            })
        }
        Addition => {
            let base = sample_shape(rng, None);
            let third = sample_shape(rng, None);
            let line_color = color_except(rng, &[base.color, third.color]);
            let line = sample_segment(rng, CENTER, 26.0, 16.0, line_color);
            Some(QuestionParams::Addition { base, line, third })
        }
    }
}

pub(crate) fn copy_to_cell(template: &Shape, from: usize, to: usize) -> Shape {
    let (a, b) = (cell_center(from), cell_center(to));
    template.translated(b.x - a.x, b.y - a.y)
}

/// Rejects draws whose frames are too similar to tell apart, transformed
/// shapes that break into pieces, and shapes
/// whose mirror image is a rotation of themselves (for those the rotation
/// and reflection rules explain the frames equally well).
fn well_posed(
    family: QuestionFamily,
    params: &QuestionParams,
    frame1: &Canvas,
    frame2: &Canvas,
    answer: &Canvas,
) -> bool {
    use QuestionFamily::*;
    if frame1.mse(frame2) < TAU_SEP {
        return false;
    }
    // A transformed shape must stay one blob; a sliver tip that breaks off
    // would read as a change in count.
    let one_blob = |c: &Canvas| components(&InkMap::new(c, BACKGROUND)).len() == 1;
    let single_shape = matches!(family, RotationPolygon | RotationSquiggle | Size | Reflection)
        || matches!(params, QuestionParams::Recolor { .. });
    if single_shape && ![frame1, frame2, answer].into_iter().all(one_blob)
    {
        return false;
    }
    match (family, params) {
        (RotationPolygon | RotationSquiggle, QuestionParams::Rotation { shape, .. }) => {
            frame2.mse(answer) >= TAU_SEP && !mirror_symmetric(shape)
        }
        (Size, _) => frame2.mse(answer) >= TAU_SEP,
        (Reflection, QuestionParams::Reflection { shape, .. }) => !mirror_symmetric(shape),
        (Addition, QuestionParams::Addition { third, .. }) => {
            answer.mse(&rasterize(core::slice::from_ref(third), BACKGROUND)) >= TAU_SEP
        }
        _ => true,
    }
}

/// True when some rotation of the mirrored shape lands within `2·τ_sep` of
/// the shape itself, checked on a 2° grid.
pub(crate) fn mirror_symmetric(shape: &Shape) -> bool {
    let original = rasterize(core::slice::from_ref(shape), BACKGROUND);
    (0..180).any(|step| {
        let t = PlanarTransform::reflection(step as f64 * TAU / 180.0);
        match shape.transformed(&t) {
            Ok(m) => rasterize(&[m], BACKGROUND).mse(&original) < 2.0 * TAU_SEP,
            Err(_) => false,
        }
    })
}
