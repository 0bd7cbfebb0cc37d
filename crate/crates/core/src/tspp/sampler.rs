use rand::Rng as _;

use super::ProbabilityGrid;
use crate::rng;
use crate::scalar::Scalar;

/// A sampled prompt at the image-space center of grid cell `(row, col)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub row: usize,
    pub col: usize,
    pub prob: f64,
}

impl Point {
    /// Pixel containing the point.
    pub fn pixel(&self, width: usize, height: usize) -> (usize, usize) {
        (
            (self.x.floor() as usize).min(width - 1),
            (self.y.floor() as usize).min(height - 1),
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointPrompts {
    pub points: Vec<Point>,
}

impl PointPrompts {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Independent Bernoulli draw per cell with probability `probs[cell]`.
///
/// Exactly one uniform variate is consumed per cell in row-major order, so the
/// result depends only on `(grid, seed)`.
pub fn sample_points<T: Scalar>(
    p: &ProbabilityGrid<T>,
    seed: u64,
    image_width: usize,
    image_height: usize,
) -> PointPrompts {
    let mut r = rng::rng(seed);
    let sx = image_width as f64 / p.grid_w as f64;
    let sy = image_height as f64 / p.grid_h as f64;
    let mut points = Vec::new();
    for row in 0..p.grid_h {
        for col in 0..p.grid_w {
            let prob = p.prob(row, col).as_f64();
            let u: f64 = r.random();
            if u < prob {
                points.push(Point {
                    x: (col as f64 + 0.5) * sx,
                    y: (row as f64 + 0.5) * sy,
                    row,
                    col,
                    prob,
                });
            }
        }
    }
    PointPrompts { points }
}
