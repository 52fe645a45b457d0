//! Circular convolution by a PSF and the spectral solve of `(HᵀH + 2I)x = rhs`.
//!
//! Boundaries are periodic, so `H` is block-circulant and diagonalized by the 2-D DFT.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Psf};

/// Largest admissible imaginary residue after an inverse transform, relative to the data scale.
const IMAG_RESIDUE_TOL: f64 = 1e-9;

/// Row/column FFT plans for one grid shape.
#[derive(Clone)]
pub(crate) struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn run(&self, data: &mut [Complex64], rows: &dyn Fft<f64>, cols: &dyn Fft<f64>) {
        debug_assert_eq!(data.len(), self.height * self.width);
        rows.process(data);
        if self.height > 1 {
            let mut column = vec![Complex64::new(0.0, 0.0); self.height];
            for c in 0..self.width {
                for r in 0..self.height {
                    column[r] = data[r * self.width + c];
                }
                cols.process(&mut column);
                for r in 0..self.height {
                    data[r * self.width + c] = column[r];
                }
            }
        }
    }

    /// Unnormalized forward transform.
    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.run(data, self.row_fwd.as_ref(), self.col_fwd.as_ref());
    }

    /// Inverse transform including the `1/(HW)` normalization.
    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, self.row_inv.as_ref(), self.col_inv.as_ref());
        let scale = 1.0 / (self.height * self.width) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    pub(crate) fn forward_real(&self, x: &ImageGrid) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = x.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut data);
        data
    }

    /// Inverse transform that drops the imaginary part after checking it is rounding noise.
    ///
    /// `scale` is the magnitude of the data the spectrum was produced from.
    pub(crate) fn inverse_real(&self, mut spectrum: Vec<Complex64>, scale: f64) -> Result<ImageGrid> {
        self.inverse(&mut spectrum);
        let mut real_max = 0.0f64;
        let mut imag_max = 0.0f64;
        let values: Vec<f64> = spectrum
            .iter()
            .map(|z| {
                real_max = real_max.max(z.re.abs());
                imag_max = imag_max.max(z.im.abs());
                z.re
            })
            .collect();
        if imag_max > IMAG_RESIDUE_TOL * (real_max + scale) {
            return Err(Error::Internal(format!(
                "inverse transform left imaginary residue {imag_max:e} (real part {real_max:e})"
            )));
        }
        Ok(ImageGrid::from_raw(self.height, self.width, values))
    }
}

/// Transfer function of a PSF on a fixed grid: the DFT of the kernel shifted so its anchor sits at `(0, 0)`.
#[derive(Clone)]
pub struct Otf {
    height: usize,
    width: usize,
    spectrum: Vec<Complex64>,
    fft: Fft2,
}

impl fmt::Debug for Otf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Otf")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("dc", &self.spectrum[0])
            .finish()
    }
}

impl Otf {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Row-major spectrum, zero frequency first.
    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    fn check(&self, x: &ImageGrid, what: &str) -> Result<()> {
        if x.shape() != self.shape() {
            return Err(Error::Dimension(format!(
                "{what}: grid is {}x{} but operator is {}x{}",
                x.height(),
                x.width(),
                self.height,
                self.width
            )));
        }
        Ok(())
    }

    fn apply_spectrum(&self, x: &ImageGrid, conjugate: bool) -> Result<ImageGrid> {
        let mut data = self.fft.forward_real(x);
        for (v, h) in data.iter_mut().zip(&self.spectrum) {
            *v *= if conjugate { h.conj() } else { *h };
        }
        self.fft.inverse_real(data, x.norm_inf())
    }
}

/// Pads `psf` to `height × width`, circularly shifts its anchor to the origin and transforms it.
pub fn psf_to_otf(psf: &Psf, height: usize, width: usize) -> Result<Otf> {
    let kernel = psf.kernel();
    if height == 0 || width == 0 {
        return Err(Error::Dimension("OTF grid must be non-empty".into()));
    }
    if kernel.height() > height || kernel.width() > width {
        return Err(Error::Dimension(format!(
            "{}x{} kernel does not fit a {height}x{width} grid",
            kernel.height(),
            kernel.width()
        )));
    }
    let (ar, ac) = psf.anchor();
    let mut data = vec![Complex64::new(0.0, 0.0); height * width];
    for i in 0..kernel.height() {
        let r = (i + height - ar) % height;
        for j in 0..kernel.width() {
            let c = (j + width - ac) % width;
            data[r * width + c].re += kernel.get(i, j);
        }
    }
    let fft = Fft2::new(height, width);
    fft.forward(&mut data);
    if (data[0].re - 1.0).abs() > 1e-10 || data[0].im.abs() > 1e-10 {
        return Err(Error::Internal(format!("OTF DC gain is {}, expected 1", data[0])));
    }
    Ok(Otf {
        height,
        width,
        spectrum: data,
        fft,
    })
}

/// Applies `H`: circular convolution of `x` with the PSF.
pub fn convolve(otf: &Otf, x: &ImageGrid) -> Result<ImageGrid> {
    otf.check(x, "convolve")?;
    otf.apply_spectrum(x, false)
}

/// Applies `Hᵀ`: circular correlation with the PSF.
pub fn convolve_adjoint(otf: &Otf, y: &ImageGrid) -> Result<ImageGrid> {
    otf.check(y, "convolve_adjoint")?;
    otf.apply_spectrum(y, true)
}

/// Frequency-domain inverse of `HᵀH + 2I`.
#[derive(Debug, Clone)]
pub struct SpectralSolver {
    otf: Otf,
    denom: Vec<f64>,
}

impl SpectralSolver {
    pub fn new(otf: Otf) -> Self {
        // |OTF|² + 2 ≥ 2, so the system is never singular.
        let denom = otf.spectrum.iter().map(|h| (h.conj() * h).re + 2.0).collect();
        Self { otf, denom }
    }

    pub fn otf(&self) -> &Otf {
        &self.otf
    }

    /// Per-frequency eigenvalues of `HᵀH + 2I`.
    pub fn denominators(&self) -> &[f64] {
        &self.denom
    }

    /// Applies `HᵀH + 2I` directly (used for residual checks).
    pub fn apply_system(&self, x: &ImageGrid) -> Result<ImageGrid> {
        let hx = convolve(&self.otf, x)?;
        let hthx = convolve_adjoint(&self.otf, &hx)?;
        Ok(hthx.zip_map(x, |a, b| a + 2.0 * b))
    }
}

/// Solves `(HᵀH + 2I)x = rhs` as `IDFT(DFT(rhs) / (|OTF|² + 2))`.
pub fn solve_deblur_system(solver: &SpectralSolver, rhs: &ImageGrid) -> Result<ImageGrid> {
    solver.otf.check(rhs, "solve_deblur_system")?;
    let fft = &solver.otf.fft;
    let mut data = fft.forward_real(rhs);
    for (v, d) in data.iter_mut().zip(&solver.denom) {
        *v /= *d;
    }
    fft.inverse_real(data, rhs.norm_inf())
}
