//! The 3×3 grid that multi-shape frames (number, color) are laid out on.
//! Cells are 21⅓ pixels wide and shapes placed in them have a circumradius
//! of at most 9, so neighbouring shapes never touch.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::geometry::{Point, CANVAS_SIZE};

pub const CELL_COUNT: usize = 9;
pub(crate) const CELL_RADIUS: (f64, f64) = (6.0, 9.0);

pub fn cell_center(cell: usize) -> Point {
    let pitch = CANVAS_SIZE as f64 / 3.0;
    let (col, row) = (cell % 3, cell / 3);
    Point::new((col as f64 + 0.5) * pitch, (row as f64 + 0.5) * pitch)
}

/// `n` distinct cells in random order.
pub(crate) fn pick_cells<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut cells: Vec<usize> = (0..CELL_COUNT).collect();
    cells.shuffle(rng);
    cells.truncate(n);
    cells
}

/// A random cell not in `used`.
pub(crate) fn free_cell<R: Rng + ?Sized>(rng: &mut R, used: &[usize]) -> Option<usize> {
    let free: Vec<usize> = (0..CELL_COUNT).filter(|c| !used.contains(c)).collect();
    if free.is_empty() {
        None
    } else {
        Some(free[rng.random_range(0..free.len())])
    }
}
