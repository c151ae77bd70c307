use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use rand::Rng;

use super::{Point, Rgb, Shape, CENTER, PALETTE, SQUIGGLE_POINTS};

/// The shape categories questions draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeClass {
    Triangle,
    Square,
    Circle,
    Squiggle,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [
        ShapeClass::Triangle,
        ShapeClass::Square,
        ShapeClass::Circle,
        ShapeClass::Squiggle,
    ];

    pub fn vertex_count(self) -> Option<usize> {
        match self {
            ShapeClass::Triangle => Some(3),
            ShapeClass::Square => Some(4),
            _ => None,
        }
    }
}

pub fn random_palette_color<R: Rng + ?Sized>(rng: &mut R) -> Rgb {
    PALETTE[rng.random_range(0..PALETTE.len())]
}

/// A random shape centered on the canvas, circumradius in `[8, 20]`, with a
/// palette color. `None` picks the class uniformly.
pub fn sample_shape<R: Rng + ?Sized>(rng: &mut R, class: Option<ShapeClass>) -> Shape {
    let class = class.unwrap_or_else(|| ShapeClass::ALL[rng.random_range(0..ShapeClass::ALL.len())]);
    let color = random_palette_color(rng);
    sample_shape_at(rng, class, CENTER, (8.0, 20.0), color)
}

pub fn sample_shape_at<R: Rng + ?Sized>(
    rng: &mut R,
    class: ShapeClass,
    center: Point,
    radius: (f64, f64),
    color: Rgb,
) -> Shape {
    let r = if radius.1 > radius.0 {
        rng.random_range(radius.0..=radius.1)
    } else {
        radius.0
    };
    match class {
        ShapeClass::Triangle => sample_polygon(rng, 3, center, r, color),
        ShapeClass::Square => sample_polygon(rng, 4, center, r, color),
        ShapeClass::Circle => Shape::circle(center, r, color),
        ShapeClass::Squiggle => sample_squiggle(rng, center, r, color),
    }
}

/// Convex polygon inscribed in the circle of `radius` around `center`, built
/// from sorted random angles. Gaps between consecutive vertices are kept away
/// from zero and below π, so the polygon is never a sliver and always
/// contains its center.
pub fn sample_polygon<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    center: Point,
    radius: f64,
    color: Rgb,
) -> Shape {
    let min_gap = 0.35 * TAU / n as f64;
    let max_gap = 0.85 * PI;
    let mut angles: Vec<f64> = Vec::with_capacity(n);
    let mut accepted = false;
    for _ in 0..10_000 {
        angles.clear();
        angles.extend((0..n).map(|_| rng.random_range(0.0..TAU)));
        angles.sort_by(f64::total_cmp);
        let gaps_ok = (0..n).all(|i| {
            let next = if i + 1 == n { angles[0] + TAU } else { angles[i + 1] };
            let gap = next - angles[i];
            gap >= min_gap && gap <= max_gap
        });
        if gaps_ok {
            accepted = true;
            break;
        }
    }
    if !accepted {
        let offset = rng.random_range(0.0..TAU);
        angles.clear();
        angles.extend((0..n).map(|i| offset + TAU * i as f64 / n as f64));
    }
    let vertices = angles
        .iter()
        .map(|&a| Point::new(center.x + radius * libm::cos(a), center.y + radius * libm::sin(a)))
        .collect();
    Shape::polygon(vertices, color)
}

/// Six control points within `max_radius` of `center`, joined in sampling
/// order into a closed polyline.
pub fn sample_squiggle<R: Rng + ?Sized>(
    rng: &mut R,
    center: Point,
    max_radius: f64,
    color: Rgb,
) -> Shape {
    let inner = 0.3 * max_radius;
    let mut points = Vec::with_capacity(SQUIGGLE_POINTS);
    loop {
        points.clear();
        for _ in 0..SQUIGGLE_POINTS {
            let r = rng.random_range(inner..=max_radius);
            let a = rng.random_range(0.0..TAU);
            points.push(Point::new(center.x + r * libm::cos(a), center.y + r * libm::sin(a)));
        }
        // Reject clumped draws so the outline stays readable.
        let spread = points
            .iter()
            .flat_map(|p| points.iter().map(move |q| p.distance(q)))
            .fold(0.0, f64::max);
        let min_step = (0..SQUIGGLE_POINTS)
            .map(|i| points[i].distance(&points[(i + 1) % SQUIGGLE_POINTS]))
            .fold(f64::INFINITY, f64::min);
        if spread >= max_radius && min_step >= 0.25 * max_radius {
            break;
        }
    }
    Shape::squiggle(points, color)
}

/// A segment with both endpoints within `max_radius` of `center` and length
/// at least `min_len`.
pub fn sample_segment<R: Rng + ?Sized>(
    rng: &mut R,
    center: Point,
    max_radius: f64,
    min_len: f64,
    color: Rgb,
) -> Shape {
    loop {
        let mut endpoint = || {
            let r = max_radius * libm::sqrt(rng.random_range(0.0..=1.0f64));
            let a = rng.random_range(0.0..TAU);
            Point::new(center.x + r * libm::cos(a), center.y + r * libm::sin(a))
        };
        let (a, b) = (endpoint(), endpoint());
        if a.distance(&b) >= min_len {
            return Shape::segment(a, b, color);
        }
    }
}
