//! Orthonormal 2-D type-II DCT over a full grid.

use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};

use crate::grid::ImageGrid;

/// Separable orthonormal DCT-II and its inverse for one grid shape.
#[derive(Clone)]
pub struct Dct2d {
    height: usize,
    width: usize,
    rows: Arc<dyn TransformType2And3<f64>>,
    cols: Arc<dyn TransformType2And3<f64>>,
}

impl std::fmt::Debug for Dct2d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Dct2d({}x{})", self.height, self.width)
    }
}

fn scale_forward(buf: &mut [f64]) {
    let n = buf.len() as f64;
    let s0 = (1.0 / n).sqrt();
    let s = (2.0 / n).sqrt();
    buf[0] *= s0;
    for v in &mut buf[1..] {
        *v *= s;
    }
}

// Undo the orthonormal weights and fold in the 2/N that DCT-III needs to invert DCT-II.
fn scale_inverse(buf: &mut [f64]) {
    let n = buf.len() as f64;
    let s0 = (1.0 / n).sqrt();
    let s = (2.0 / n).sqrt();
    buf[0] *= 2.0 / n / s0;
    for v in &mut buf[1..] {
        *v *= 2.0 / n / s;
    }
}

impl Dct2d {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = DctPlanner::new();
        Self {
            height,
            width,
            rows: planner.plan_dct2(width),
            cols: planner.plan_dct2(height),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn columns(&self, data: &mut [f64], f: impl Fn(&mut [f64])) {
        let mut col = vec![0.0; self.height];
        for c in 0..self.width {
            for r in 0..self.height {
                col[r] = data[r * self.width + c];
            }
            f(&mut col);
            for r in 0..self.height {
                data[r * self.width + c] = col[r];
            }
        }
    }

    /// Orthonormal forward transform of row-major `data` in place.
    pub fn forward(&self, data: &mut [f64]) {
        assert_eq!(data.len(), self.height * self.width);
        for row in data.chunks_exact_mut(self.width) {
            self.rows.process_dct2(row);
            scale_forward(row);
        }
        self.columns(data, |col| {
            self.cols.process_dct2(col);
            scale_forward(col);
        });
    }

    /// Inverse of [`Dct2d::forward`].
    pub fn inverse(&self, data: &mut [f64]) {
        assert_eq!(data.len(), self.height * self.width);
        self.columns(data, |col| {
            scale_inverse(col);
            self.cols.process_dct3(col);
        });
        for row in data.chunks_exact_mut(self.width) {
            scale_inverse(row);
            self.rows.process_dct3(row);
        }
    }

    pub fn forward_grid(&self, x: &ImageGrid) -> Vec<f64> {
        let mut data = x.values().to_vec();
        self.forward(&mut data);
        data
    }
}
