use alloc::vec;
use alloc::vec::Vec;

use super::{GeometryError, Point, Rgb, Shape, ShapeKind, CANVAS_LEN, CANVAS_SIZE, CHANNELS, STROKE_HALF_WIDTH};

/// A 64×64 RGB image stored as 8-bit intensities, row-major with
/// interleaved channels (`y`, then `x`, then channel).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Canvas {
    data: Vec<u8>,
}

impl core::fmt::Debug for Canvas {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let painted = self.data.chunks_exact(3).filter(|p| p != &[255, 255, 255]).count();
        f.debug_struct("Canvas").field("non_white_pixels", &painted).finish()
    }
}

impl Canvas {
    pub fn filled(color: Rgb) -> Self {
        let px = color.to_bytes();
        let mut data = Vec::with_capacity(CANVAS_LEN);
        for _ in 0..CANVAS_SIZE * CANVAS_SIZE {
            data.extend_from_slice(&px);
        }
        Self { data }
    }

    /// All-white canvas.
    pub fn blank() -> Self {
        Self {
            data: vec![255; CANVAS_LEN],
        }
    }

    pub fn from_bytes(data: Vec<u8>) -> Result<Self, GeometryError> {
        if data.len() != CANVAS_LEN {
            return Err(GeometryError::InvalidShape("canvas buffer must hold 64x64x3 bytes"));
        }
        Ok(Self { data })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * CANVAS_SIZE + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, px: [u8; 3]) {
        let i = (y * CANVAS_SIZE + x) * CHANNELS;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    pub fn rgb(&self, x: usize, y: usize) -> Rgb {
        Rgb::from_bytes(self.pixel(x, y))
    }

    /// Intensity in `[0, 1]` of flat element `i`.
    #[inline]
    pub fn intensity(&self, i: usize) -> f32 {
        self.data[i] as f32 / 255.0
    }

    pub fn intensities(&self) -> impl Iterator<Item = f32> + '_ {
        self.data.iter().map(|&b| b as f32 / 255.0)
    }

    /// True when every pixel equals `background`.
    pub fn is_uniform(&self, background: Rgb) -> bool {
        let bg = background.to_bytes();
        self.data.chunks_exact(3).all(|p| p == bg)
    }

    /// Mean squared intensity difference over all pixels and channels.
    pub fn mse(&self, other: &Canvas) -> f64 {
        let sum: u64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a as i64 - b as i64;
                (d * d) as u64
            })
            .sum();
        sum as f64 / (255.0 * 255.0) / CANVAS_LEN as f64
    }
}

/// Paints `shapes` in order over a `background` canvas. Later shapes cover
/// earlier ones. No anti-aliasing: a pixel takes a shape's color iff its
/// center lies inside the shape.
pub fn rasterize(shapes: &[Shape], background: Rgb) -> Canvas {
    let mut canvas = Canvas::filled(background);
    for shape in shapes {
        paint(&mut canvas, shape);
    }
    canvas
}

fn paint(canvas: &mut Canvas, shape: &Shape) {
    let px = shape.color.to_bytes();
    match shape.kind {
        ShapeKind::Polygon => fill_polygon(canvas, &shape.vertices, px),
        ShapeKind::Circle => {
            let c = shape.vertices[0];
            let r = shape.radius().unwrap_or(0.0);
            fill_where(canvas, shape.bounds(), px, |p| {
                let (dx, dy) = (p.x - c.x, p.y - c.y);
                dx * dx + dy * dy <= r * r
            });
        }
        ShapeKind::Squiggle | ShapeKind::Segment => {
            let v = &shape.vertices;
            let closed = shape.kind == ShapeKind::Squiggle;
            let n_seg = if closed { v.len() } else { v.len() - 1 };
            let limit = STROKE_HALF_WIDTH * STROKE_HALF_WIDTH;
            fill_where(canvas, shape.bounds(), px, |p| {
                (0..n_seg).any(|i| segment_distance_sq(p, v[i], v[(i + 1) % v.len()]) <= limit)
            });
        }
    }
}

/// Even-odd scanline fill sampled at pixel centers. An edge counts on a row
/// when exactly one endpoint lies at or above the sample line, and a pixel is
/// inside when an odd number of crossings lie at or left of its center.
fn fill_polygon(canvas: &mut Canvas, vertices: &[Point], px: [u8; 3]) {
    let n = vertices.len();
    let mut xs: Vec<f64> = Vec::with_capacity(n);
    for row in 0..CANVAS_SIZE {
        let yc = row as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            if (a.y <= yc) != (b.y <= yc) {
                xs.push(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        if xs.is_empty() {
            continue;
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            // Pixel centers x + 0.5 in [span[0], span[1]).
            let start = libm::ceil(span[0] - 0.5).max(0.0) as usize;
            let end = libm::ceil(span[1] - 0.5).clamp(0.0, CANVAS_SIZE as f64) as usize;
            for col in start..end {
                canvas.set_pixel(col, row, px);
            }
        }
    }
}

fn fill_where(
    canvas: &mut Canvas,
    bounds: (f64, f64, f64, f64),
    px: [u8; 3],
    inside: impl Fn(Point) -> bool,
) {
    let lo = |v: f64| libm::floor(v).clamp(0.0, CANVAS_SIZE as f64) as usize;
    let hi = |v: f64| (libm::ceil(v) + 1.0).clamp(0.0, CANVAS_SIZE as f64) as usize;
    for row in lo(bounds.1)..hi(bounds.3) {
        for col in lo(bounds.0)..hi(bounds.2) {
            if inside(Point::new(col as f64 + 0.5, row as f64 + 0.5)) {
                canvas.set_pixel(col, row, px);
            }
        }
    }
}

fn segment_distance_sq(p: Point, a: Point, b: Point) -> f64 {
    let (abx, aby) = (b.x - a.x, b.y - a.y);
    let (apx, apy) = (p.x - a.x, p.y - a.y);
    let len_sq = abx * abx + aby * aby;
    let t = if len_sq > 0.0 {
        ((apx * abx + apy * aby) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (apx - t * abx, apy - t * aby);
    dx * dx + dy * dy
}
