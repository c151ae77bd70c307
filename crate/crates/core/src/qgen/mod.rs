//! Question generation for the seven transformation families.
//!
//! A multiple-choice question always carries three context slots and four
//! options. Families driven by a single transform (rotation, size,
//! reflection, number, color) leave slot 0 as an all-background frame and
//! put `S, T·S` in slots 1 and 2. Addition uses all three slots.

mod dataset;
mod distractors;
mod families;
mod layout;
mod noise;
mod norm;

pub use dataset::{
    family_schedule, gen_dataset, generate_record, record_rng, DatasetConfig, DatasetManifest,
    Record, Scenario, StatsAccumulator, FORMAT_VERSION,
};
pub use distractors::gen_distractors;
pub use families::{addition_frame, gen_open_question, gen_question};
pub use layout::{cell_center, CELL_COUNT};
pub use noise::{add_noise, noise_field};
pub use norm::{denormalize, denormalize_to_canvas, normalize, normalize_into, NormalizationStats};

use alloc::vec::Vec;

use crate::geometry::{rasterize, Canvas, PlanarTransform, Rgb, Shape, WHITE};

/// Minimum per-pixel mean squared distance between any two options.
pub const TAU_SEP: f64 = 0.002;
/// Rejection-sampling budget per question.
pub const MAX_ATTEMPTS: usize = 1000;
/// Rotations closer than this to the identity are never sampled.
pub const MIN_ROTATION: f64 = core::f64::consts::PI / 12.0;
/// Scale factors inside this band are never sampled.
pub const SCALE_EXCLUSION: (f64, f64) = (0.9, 1.1);
/// Range of the size family's scale factor.
pub const SCALE_RANGE: (f64, f64) = (0.5, 2.0);
/// Minimum gap between the true and a distractor scale factor.
pub const MIN_SCALE_GAP: f64 = 0.2;
/// Background of every generated frame.
pub const BACKGROUND: Rgb = WHITE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QuestionFamily {
    RotationPolygon,
    RotationSquiggle,
    Size,
    Reflection,
    Number,
    Color,
    Addition,
}

impl QuestionFamily {
    pub const ALL: [QuestionFamily; 7] = [
        QuestionFamily::RotationPolygon,
        QuestionFamily::RotationSquiggle,
        QuestionFamily::Size,
        QuestionFamily::Reflection,
        QuestionFamily::Number,
        QuestionFamily::Color,
        QuestionFamily::Addition,
    ];

    /// Families that have an open-question form. Number is excluded because
    /// the placement of the added exemplar cannot be predicted; Addition is
    /// excluded because it needs three context frames.
    pub const OPEN: [QuestionFamily; 5] = [
        QuestionFamily::RotationPolygon,
        QuestionFamily::RotationSquiggle,
        QuestionFamily::Size,
        QuestionFamily::Reflection,
        QuestionFamily::Color,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            QuestionFamily::RotationPolygon => "rotation_polygon",
            QuestionFamily::RotationSquiggle => "rotation_squiggle",
            QuestionFamily::Size => "size",
            QuestionFamily::Reflection => "reflection",
            QuestionFamily::Number => "number",
            QuestionFamily::Color => "color",
            QuestionFamily::Addition => "addition",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|f| f.name() == name)
    }

    pub fn has_open_form(self) -> bool {
        Self::OPEN.contains(&self)
    }

    /// Whether the question uses context slot 0.
    pub fn uses_three_context_frames(self) -> bool {
        self == QuestionFamily::Addition
    }
}

impl core::fmt::Display for QuestionFamily {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenerationError {
    #[error("{family}: rejection budget of {attempts} attempts exhausted")]
    GenerationFailed { family: QuestionFamily, attempts: usize },
    #[error("{family} has no open-question form")]
    NoOpenForm { family: QuestionFamily },
    #[error("invalid dataset configuration: {0}")]
    InvalidConfig(&'static str),
}

/// A multiple-choice question.
#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub family: QuestionFamily,
    pub context: [Canvas; 3],
    pub options: [Canvas; 4],
    pub answer_index: u8,
}

impl Question {
    pub fn correct_option(&self) -> &Canvas {
        &self.options[self.answer_index as usize]
    }
}

/// An open question: two context frames and the frame that follows them.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenQuestion {
    pub family: QuestionFamily,
    pub context: [Canvas; 2],
    pub target: Canvas,
}

/// The generative parameters behind a question, enough to re-render every
/// context frame and the correct answer.
#[derive(Debug, Clone, PartialEq)]
pub enum QuestionParams {
    /// Frames `S, R(θ)S, R(2θ)S`.
    Rotation { shape: Shape, theta: f64 },
    /// Frames `S, μS, μ²S`.
    Size { shape: Shape, mu: f64 },
    /// Frames `S, TS, TTS` with `T` = rotate(θ) after reflect.
    Reflection { shape: Shape, theta: f64 },
    /// Grid cells in order of appearance and the shape lists of the two
    /// context frames and the answer.
    Number { start: usize, cells: Vec<usize>, frames: [Vec<Shape>; 3] },
    /// Grid cells in order of appearance and the shape lists of the two
    /// context frames and the answer.
    Color { color1: Rgb, color2: Rgb, cells: Vec<usize>, frames: [Vec<Shape>; 3] },
    /// `im1 = [base]`, `im2 = [base, line]`, `im3 = [third]`.
    Addition { base: Shape, line: Shape, third: Shape },
    /// Open-question color rule: the answer is `first` painted in `second`'s color.
    Recolor { first: Shape, second: Shape },
}

impl QuestionParams {
    fn transform(&self) -> Option<(PlanarTransform, &Shape)> {
        match self {
            QuestionParams::Rotation { shape, theta } => Some((PlanarTransform::rotation(*theta), shape)),
            QuestionParams::Size { shape, mu } => Some((PlanarTransform::scaling(*mu), shape)),
            QuestionParams::Reflection { shape, theta } => {
                Some((PlanarTransform::reflection(*theta), shape))
            }
            _ => None,
        }
    }

    /// Shape lists of the sequence `[frame 1, frame 2, answer]`.
    pub fn frame_shapes(&self) -> [Vec<Shape>; 3] {
        if let Some((t, s)) = self.transform() {
            let f1 = s.clone();
            let f2 = f1.transformed(&t).expect("generated frames fit the canvas");
            let f3 = f2.transformed(&t).expect("generated frames fit the canvas");
            return [alloc::vec![f1], alloc::vec![f2], alloc::vec![f3]];
        }
        match self {
            QuestionParams::Number { frames, .. } | QuestionParams::Color { frames, .. } => frames.clone(),
            QuestionParams::Addition { base, line, third } => [
                alloc::vec![base.clone()],
                alloc::vec![base.clone(), line.clone()],
                alloc::vec![third.clone()],
            ],
            QuestionParams::Recolor { first, second } => [
                alloc::vec![first.clone()],
                alloc::vec![second.clone()],
                alloc::vec![first.with_color(second.color)],
            ],
            _ => unreachable!("transform families handled above"),
        }
    }

    /// The three context slots of the multiple-choice form.
    pub fn render_context(&self) -> [Canvas; 3] {
        let [a, b, c] = self.frame_shapes();
        match self {
            QuestionParams::Addition { .. } => [
                rasterize(&a, BACKGROUND),
                rasterize(&b, BACKGROUND),
                rasterize(&c, BACKGROUND),
            ],
            _ => [
                Canvas::filled(BACKGROUND),
                rasterize(&a, BACKGROUND),
                rasterize(&b, BACKGROUND),
            ],
        }
    }

    /// The correct next frame, re-derived from the parameters.
    pub fn render_answer(&self) -> Canvas {
        match self {
            QuestionParams::Addition { .. } => {
                let [im1, im2, im3] = self.render_context();
                addition_frame(&im1, &im2, &im3, BACKGROUND)
            }
            _ => {
                let [_, _, answer] = self.frame_shapes();
                rasterize(&answer, BACKGROUND)
            }
        }
    }
}

/// A generated multiple-choice question together with its parameters.
#[derive(Debug, Clone)]
pub struct GeneratedQuestion {
    pub question: Question,
    pub params: QuestionParams,
}

#[derive(Debug, Clone)]
pub struct GeneratedOpenQuestion {
    pub question: OpenQuestion,
    pub params: QuestionParams,
}

/// Tracks the shared rejection budget of one question.
pub(crate) struct Budget {
    family: QuestionFamily,
    used: usize,
}

impl Budget {
    pub(crate) fn new(family: QuestionFamily) -> Self {
        Self { family, used: 0 }
    }

    pub(crate) fn spend(&mut self) -> Result<(), GenerationError> {
        self.used += 1;
        if self.used > MAX_ATTEMPTS {
            Err(GenerationError::GenerationFailed {
                family: self.family,
                attempts: MAX_ATTEMPTS,
            })
        } else {
            Ok(())
        }
    }
}
