//! Image grids, point-spread kernels and problem definitions.
//!
//! Storage is row-major with `(row, col)` indexing and the origin at the top-left
//! corner. Every intensity is an `f64`.

use crate::error::{Error, Result};
use crate::linops::{self, Otf, SpectralSolver};

/// A 2-D field of finite real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

/// Pointwise binary operations on grids of equal shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "grid dimensions must be positive, got {height}x{width}"
        )));
    }
    Ok(())
}

impl ImageGrid {
    /// Grid of the given shape with every pixel set to `fill`.
    pub fn new(height: usize, width: usize, fill: f64) -> Result<Self> {
        check_dims(height, width)?;
        if !fill.is_finite() {
            return Err(Error::Domain(format!("fill value {fill} is not finite")));
        }
        Ok(Self {
            height,
            width,
            values: vec![fill; height * width],
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, 0.0)
    }

    /// Wraps row-major `values`, validating length and finiteness.
    pub fn from_vec(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if values.len() != height * width {
            return Err(Error::Dimension(format!(
                "expected {} values for a {height}x{width} grid, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite value {} at row {}, col {}",
                values[pos],
                pos / width,
                pos % width
            )));
        }
        Ok(Self { height, width, values })
    }

    /// Builds a grid by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        check_dims(height, width)?;
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::from_vec(height, width, values)
    }

    /// Unchecked constructor for solver internals; finiteness is verified per iteration.
    pub(crate) fn from_raw(height: usize, width: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn ensure_shape(&self, other: &ImageGrid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: shape {}x{} does not match {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    /// Pointwise `self op other`.
    pub fn elementwise(&self, op: Elementwise, other: &ImageGrid) -> Result<ImageGrid> {
        self.ensure_shape(other, "elementwise")?;
        if op == Elementwise::Div {
            if let Some(pos) = other.values.iter().position(|&v| v == 0.0) {
                return Err(Error::Domain(format!(
                    "division by zero at row {}, col {}",
                    pos / self.width,
                    pos % self.width
                )));
            }
        }
        let f: fn(f64, f64) -> f64 = match op {
            Elementwise::Add => |a, b| a + b,
            Elementwise::Sub => |a, b| a - b,
            Elementwise::Mul => |a, b| a * b,
            Elementwise::Div => |a, b| a / b,
            Elementwise::Max => f64::max,
        };
        let out = self.zip_map(other, f);
        if !out.is_finite() {
            return Err(Error::Domain("elementwise result is not finite".into()));
        }
        Ok(out)
    }

    pub fn add(&self, other: &ImageGrid) -> Result<ImageGrid> {
        self.elementwise(Elementwise::Add, other)
    }

    pub fn sub(&self, other: &ImageGrid) -> Result<ImageGrid> {
        self.elementwise(Elementwise::Sub, other)
    }

    pub fn mul(&self, other: &ImageGrid) -> Result<ImageGrid> {
        self.elementwise(Elementwise::Mul, other)
    }

    pub fn div(&self, other: &ImageGrid) -> Result<ImageGrid> {
        self.elementwise(Elementwise::Div, other)
    }

    pub fn max(&self, other: &ImageGrid) -> Result<ImageGrid> {
        self.elementwise(Elementwise::Max, other)
    }

    /// Pointwise map; the caller is responsible for keeping values finite.
    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        Self::from_raw(self.height, self.width, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination of two grids already known to share a shape.
    pub(crate) fn zip_map(&self, other: &ImageGrid, f: impl Fn(f64, f64) -> f64) -> ImageGrid {
        debug_assert!(self.same_shape(other));
        Self::from_raw(
            self.height,
            self.width,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    /// Multiplies every pixel by `s`.
    pub fn scaled(&self, s: f64) -> ImageGrid {
        self.map(|v| v * s)
    }

    /// Adds `s` to every pixel.
    pub fn offset(&self, s: f64) -> ImageGrid {
        self.map(|v| v + s)
    }

    pub fn transpose(&self) -> ImageGrid {
        let mut values = Vec::with_capacity(self.len());
        for c in 0..self.width {
            for r in 0..self.height {
                values.push(self.get(r, c));
            }
        }
        Self::from_raw(self.width, self.height, values)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Euclidean inner product; shapes must agree.
    pub fn dot(&self, other: &ImageGrid) -> Result<f64> {
        self.ensure_shape(other, "dot")?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    /// `‖self − other‖₂`.
    pub fn distance(&self, other: &ImageGrid) -> Result<f64> {
        self.ensure_shape(other, "distance")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// `‖self − other‖∞`.
    pub fn distance_inf(&self, other: &ImageGrid) -> Result<f64> {
        self.ensure_shape(other, "distance_inf")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }
}

/// Nonnegative blur kernel with unit mass and a designated center pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    kernel: ImageGrid,
    anchor: (usize, usize),
}

/// Tolerance on the unit-sum requirement of a kernel.
pub const PSF_SUM_TOL: f64 = 1e-12;

impl Psf {
    /// Validates nonnegativity, unit sum and anchor position.
    pub fn new(kernel: ImageGrid, anchor: (usize, usize)) -> Result<Self> {
        if anchor.0 >= kernel.height() || anchor.1 >= kernel.width() {
            return Err(Error::Dimension(format!(
                "anchor {anchor:?} outside {}x{} kernel",
                kernel.height(),
                kernel.width()
            )));
        }
        if kernel.min_value() < 0.0 {
            return Err(Error::Domain("PSF has negative entries".into()));
        }
        let sum = kernel.sum();
        if (sum - 1.0).abs() > PSF_SUM_TOL {
            return Err(Error::Domain(format!("PSF sums to {sum}, expected 1")));
        }
        Ok(Self { kernel, anchor })
    }

    /// Rescales a nonnegative kernel to unit sum.
    pub fn normalized(kernel: ImageGrid, anchor: (usize, usize)) -> Result<Self> {
        let sum = kernel.sum();
        if !(sum > 0.0) {
            return Err(Error::Domain("PSF has no positive mass".into()));
        }
        Self::new(kernel.scaled(1.0 / sum), anchor)
    }

    /// The 1×1 identity kernel.
    pub fn delta() -> Self {
        Self {
            kernel: ImageGrid::from_raw(1, 1, vec![1.0]),
            anchor: (0, 0),
        }
    }

    pub fn kernel(&self) -> &ImageGrid {
        &self.kernel
    }

    pub fn anchor(&self) -> (usize, usize) {
        self.anchor
    }
}

/// Observed data together with the forward operator and background.
#[derive(Debug, Clone)]
pub struct Problem {
    g: ImageGrid,
    solver: SpectralSolver,
    background: f64,
}

impl Problem {
    /// Builds the problem for `g`, transforming the PSF to the grid of `g`.
    pub fn new(g: ImageGrid, psf: &Psf, background: f64) -> Result<Self> {
        let otf = linops::psf_to_otf(psf, g.height(), g.width())?;
        Self::with_otf(g, otf, background)
    }

    pub fn with_otf(g: ImageGrid, otf: Otf, background: f64) -> Result<Self> {
        if g.min_value() < 0.0 {
            return Err(Error::Domain("observed data must be nonnegative".into()));
        }
        if !(background >= 0.0) || !background.is_finite() {
            return Err(Error::Parameter(format!(
                "background must be a finite nonnegative number, got {background}"
            )));
        }
        if otf.shape() != g.shape() {
            return Err(Error::Dimension(format!(
                "OTF is {:?} but data is {:?}",
                otf.shape(),
                g.shape()
            )));
        }
        Ok(Self {
            g,
            solver: SpectralSolver::new(otf),
            background,
        })
    }

    pub fn g(&self) -> &ImageGrid {
        &self.g
    }

    pub fn otf(&self) -> &Otf {
        self.solver.otf()
    }

    pub fn spectral_solver(&self) -> &SpectralSolver {
        &self.solver
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    pub fn shape(&self) -> (usize, usize) {
        self.g.shape()
    }
}
