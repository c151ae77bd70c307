//! Shapes, planar transforms and a deterministic 64×64 RGB rasterizer.
//!
//! Coordinates are continuous canvas units with the origin at the top-left
//! corner, `x` to the right and `y` down. Pixel `(i, j)` covers
//! `[i, i+1) × [j, j+1)` and is sampled at its center.
//!
//! Every vertex produced here is snapped to a dyadic grid of `2^-40`
//! canvas units. On that grid subtraction from the pivot is exact, so
//! reflecting twice reproduces the original coordinates bit for bit.

mod raster;
mod sample;

pub use raster::{rasterize, Canvas};
pub use sample::{
    random_palette_color, sample_polygon, sample_segment, sample_shape, sample_shape_at,
    sample_squiggle, ShapeClass,
};

use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

/// Width and height of every canvas, in pixels.
pub const CANVAS_SIZE: usize = 64;
/// Color channels per pixel.
pub const CHANNELS: usize = 3;
/// Number of bytes in one canvas.
pub const CANVAS_LEN: usize = CANVAS_SIZE * CANVAS_SIZE * CHANNELS;
/// The pivot used by all transforms.
pub const CENTER: Point = Point { x: 32.0, y: 32.0 };
/// Half the stroke width of squiggles and segments.
pub const STROKE_HALF_WIDTH: f64 = 1.0;
/// Number of control points in a squiggle.
pub const SQUIGGLE_POINTS: usize = 6;

const SNAP: f64 = 1_099_511_627_776.0; // 2^40

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("shape leaves the canvas")]
    OutOfBounds,
    #[error("invalid shape: {0}")]
    InvalidShape(&'static str),
    #[error("invalid transform: {0}")]
    InvalidTransform(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }

    pub(crate) fn snapped(self) -> Self {
        Self {
            x: libm::round(self.x * SNAP) / SNAP,
            y: libm::round(self.y * SNAP) / SNAP,
        }
    }
}

/// An RGB color with channels in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rgb {
    pub r: f32,
    pub g: f32,
    pub b: f32,
}

impl Rgb {
    pub const fn new(r: f32, g: f32, b: f32) -> Self {
        Self { r, g, b }
    }

    pub fn from_bytes(bytes: [u8; 3]) -> Self {
        Self::new(
            bytes[0] as f32 / 255.0,
            bytes[1] as f32 / 255.0,
            bytes[2] as f32 / 255.0,
        )
    }

    /// 8-bit quantization, `round(i * 255)` per channel.
    pub fn to_bytes(self) -> [u8; 3] {
        let q = |v: f32| libm::roundf(v.clamp(0.0, 1.0) * 255.0) as u8;
        [q(self.r), q(self.g), q(self.b)]
    }

    pub fn channels(self) -> [f32; 3] {
        [self.r, self.g, self.b]
    }

    /// Largest per-channel absolute difference.
    pub fn max_channel_diff(self, other: Rgb) -> f32 {
        let a = self.channels();
        let b = other.channels();
        (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f32::max)
    }

    /// Channel-wise equality within `tol`.
    pub fn approx_eq(self, other: Rgb, tol: f32) -> bool {
        self.max_channel_diff(other) <= tol
    }
}

pub const WHITE: Rgb = Rgb::new(1.0, 1.0, 1.0);

/// The fixed shape palette. All entries sit far from the white background and
/// from each other.
pub const PALETTE: [Rgb; 8] = [
    Rgb::new(1.0, 0.0, 0.0), // red
    Rgb::new(0.0, 1.0, 0.0), // green
    Rgb::new(0.0, 0.0, 1.0), // blue
    Rgb::new(1.0, 1.0, 0.0), // yellow
    Rgb::new(1.0, 0.0, 1.0), // magenta
    Rgb::new(0.0, 1.0, 1.0), // cyan
    Rgb::new(0.0, 0.0, 0.0), // black
    Rgb::new(1.0, 0.5, 0.0), // orange
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    /// Filled convex polygon, 3 to 8 vertices.
    Polygon,
    /// Filled circle; vertex 0 is the center and vertex 1 lies on the rim.
    Circle,
    /// Closed polyline through six control points, stroked.
    Squiggle,
    /// Open two-point segment, stroked.
    Segment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub vertices: Vec<Point>,
    pub color: Rgb,
}

impl Shape {
    pub fn polygon(vertices: Vec<Point>, color: Rgb) -> Self {
        Self::with_kind(ShapeKind::Polygon, vertices, color)
    }

    pub fn circle(center: Point, radius: f64, color: Rgb) -> Self {
        let rim = Point::new(center.x + radius, center.y);
        Self::with_kind(ShapeKind::Circle, alloc::vec![center, rim], color)
    }

    pub fn squiggle(points: Vec<Point>, color: Rgb) -> Self {
        Self::with_kind(ShapeKind::Squiggle, points, color)
    }

    pub fn segment(a: Point, b: Point, color: Rgb) -> Self {
        Self::with_kind(ShapeKind::Segment, alloc::vec![a, b], color)
    }

    fn with_kind(kind: ShapeKind, vertices: Vec<Point>, color: Rgb) -> Self {
        Self {
            kind,
            vertices: vertices.into_iter().map(Point::snapped).collect(),
            color,
        }
    }

    pub fn is_filled(&self) -> bool {
        matches!(self.kind, ShapeKind::Polygon | ShapeKind::Circle)
    }

    pub fn radius(&self) -> Option<f64> {
        match self.kind {
            ShapeKind::Circle => Some(self.vertices[0].distance(&self.vertices[1])),
            _ => None,
        }
    }

    /// Axis-aligned bounds `(min_x, min_y, max_x, max_y)` of the painted area.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        match self.kind {
            ShapeKind::Circle => {
                let c = self.vertices[0];
                let r = self.radius().unwrap_or(0.0);
                (c.x - r, c.y - r, c.x + r, c.y + r)
            }
            _ => {
                let pad = if self.is_filled() { 0.0 } else { STROKE_HALF_WIDTH };
                let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
                for v in &self.vertices {
                    b.0 = b.0.min(v.x);
                    b.1 = b.1.min(v.y);
                    b.2 = b.2.max(v.x);
                    b.3 = b.3.max(v.y);
                }
                (b.0 - pad, b.1 - pad, b.2 + pad, b.3 + pad)
            }
        }
    }

    /// Largest distance from `p` to any painted point.
    pub fn extent_from(&self, p: Point) -> f64 {
        match self.kind {
            ShapeKind::Circle => self.vertices[0].distance(&p) + self.radius().unwrap_or(0.0),
            _ => {
                let pad = if self.is_filled() { 0.0 } else { STROKE_HALF_WIDTH };
                self.vertices.iter().map(|v| v.distance(&p)).fold(0.0, f64::max) + pad
            }
        }
    }

    pub fn in_bounds(&self) -> bool {
        let (x0, y0, x1, y1) = self.bounds();
        let size = CANVAS_SIZE as f64;
        x0 > 0.0 && y0 > 0.0 && x1 < size && y1 < size
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.vertices.len();
        match self.kind {
            ShapeKind::Polygon if !(3..=8).contains(&n) => {
                return Err(GeometryError::InvalidShape("polygon needs 3 to 8 vertices"))
            }
            ShapeKind::Squiggle if n != SQUIGGLE_POINTS => {
                return Err(GeometryError::InvalidShape("squiggle needs 6 control points"))
            }
            ShapeKind::Circle | ShapeKind::Segment if n != 2 => {
                return Err(GeometryError::InvalidShape("circle and segment use two points"))
            }
            _ => {}
        }
        if !self.vertices.iter().all(Point::is_finite) {
            return Err(GeometryError::InvalidShape("non-finite coordinate"));
        }
        let ch = self.color.channels();
        if ch.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(GeometryError::InvalidShape("color channel outside [0, 1]"));
        }
        if self.color.max_channel_diff(WHITE) < 0.2 {
            return Err(GeometryError::InvalidShape("color too close to the background"));
        }
        if !self.in_bounds() {
            return Err(GeometryError::OutOfBounds);
        }
        Ok(())
    }

    pub fn with_color(&self, color: Rgb) -> Self {
        Self {
            color,
            ..self.clone()
        }
    }

    /// Moves the shape by `(dx, dy)` without a bounds check.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            kind: self.kind,
            vertices: self
                .vertices
                .iter()
                .map(|v| Point::new(v.x + dx, v.y + dy).snapped())
                .collect(),
            color: self.color,
        }
    }

    /// Applies `t`, failing when the result leaves the canvas.
    pub fn transformed(&self, t: &PlanarTransform) -> Result<Shape, GeometryError> {
        apply_transform(self, t)
    }
}

/// Reflection about the vertical axis through `pivot`, then scaling by `mu`,
/// then rotation by `theta`, all about `pivot`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarTransform {
    theta: f64,
    mu: f64,
    reflect: bool,
    pivot: Point,
}

impl PlanarTransform {
    pub fn new(theta: f64, mu: f64, reflect: bool) -> Result<Self, GeometryError> {
        Self::about(theta, mu, reflect, CENTER)
    }

    pub fn about(theta: f64, mu: f64, reflect: bool, pivot: Point) -> Result<Self, GeometryError> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(GeometryError::InvalidTransform("scale must be positive"));
        }
        if !theta.is_finite() || !pivot.is_finite() {
            return Err(GeometryError::InvalidTransform("non-finite parameter"));
        }
        Ok(Self {
            theta: normalize_angle(theta),
            mu,
            reflect,
            pivot,
        })
    }

    pub fn identity() -> Self {
        Self {
            theta: 0.0,
            mu: 1.0,
            reflect: false,
            pivot: CENTER,
        }
    }

    pub fn rotation(theta: f64) -> Self {
        Self {
            theta: normalize_angle(theta),
            ..Self::identity()
        }
    }

    /// Panics if `mu` is not positive.
    pub fn scaling(mu: f64) -> Self {
        Self::new(0.0, mu, false).expect("positive scale")
    }

    /// Reflect, then rotate by `theta`.
    pub fn reflection(theta: f64) -> Self {
        Self {
            theta: normalize_angle(theta),
            reflect: true,
            ..Self::identity()
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn reflect(&self) -> bool {
        self.reflect
    }

    pub fn pivot(&self) -> Point {
        self.pivot
    }

    pub fn apply_point(&self, p: Point) -> Point {
        let mut dx = p.x - self.pivot.x;
        let dy = p.y - self.pivot.y;
        if self.reflect {
            dx = -dx;
        }
        let (sx, sy) = (dx * self.mu, dy * self.mu);
        let (s, c) = (libm::sin(self.theta), libm::cos(self.theta));
        Point::new(self.pivot.x + (c * sx - s * sy), self.pivot.y + (s * sx + c * sy)).snapped()
    }
}

/// Maps an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Smallest absolute difference between two angles, in `[0, π]`.
pub fn angle_distance(a: f64, b: f64) -> f64 {
    let d = normalize_angle(a - b);
    if d > PI {
        TAU - d
    } else {
        d
    }
}

pub fn apply_transform(shape: &Shape, t: &PlanarTransform) -> Result<Shape, GeometryError> {
    let out = Shape {
        kind: shape.kind,
        vertices: shape.vertices.iter().map(|&v| t.apply_point(v)).collect(),
        color: shape.color,
    };
    if out.vertices.iter().all(Point::is_finite) && out.in_bounds() {
        Ok(out)
    } else {
        Err(GeometryError::OutOfBounds)
    }
}

/// True iff `shape`, `t·shape`, …, `t^(n-1)·shape` all stay on the canvas.
pub fn frames_fit(shape: &Shape, t: &PlanarTransform, n_frames: usize) -> bool {
    if !shape.in_bounds() {
        return false;
    }
    let mut current = shape.clone();
    for _ in 1..n_frames {
        match apply_transform(&current, t) {
            Ok(next) => current = next,
            Err(_) => return false,
        }
    }
    true
}
