//! Forward model `g = Poisson(ν(Hx + b))/ν` with a Gaussian PSF.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Psf};
use crate::linops::{convolve, psf_to_otf, Otf};

/// Parameters of a simulated acquisition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeSpec {
    /// Standard deviation of the Gaussian PSF, in pixels.
    pub sigma: f64,
    /// Half-width of the square kernel window; `None` means `ceil(4σ)`.
    pub kernel_radius: Option<usize>,
    /// Background added to the blurred image before sampling.
    pub b: f64,
    /// Count scale. Lower values mean stronger noise.
    pub nu: f64,
    pub seed: u64,
}

impl DegradeSpec {
    pub fn new(sigma: f64, nu: f64, seed: u64) -> Self {
        Self {
            sigma,
            kernel_radius: None,
            b: 0.0,
            nu,
            seed,
        }
    }

    pub fn radius(&self) -> usize {
        self.kernel_radius
            .unwrap_or_else(|| ((4.0 * self.sigma).ceil() as usize).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Parameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::Parameter(format!("nu must be positive, got {}", self.nu)));
        }
        if !(self.b >= 0.0) || !self.b.is_finite() {
            return Err(Error::Parameter(format!(
                "background must be nonnegative, got {}",
                self.b
            )));
        }
        if self.kernel_radius == Some(0) {
            return Err(Error::Parameter("kernel radius must be at least 1".into()));
        }
        Ok(())
    }
}

/// Normalized Gaussian kernel on a `(2·radius + 1)²` window, anchored at its center.
pub fn gaussian_psf(sigma: f64, radius: usize, height: usize, width: usize) -> Result<Psf> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    if radius == 0 {
        return Err(Error::Parameter("kernel radius must be at least 1".into()));
    }
    let size = 2 * radius + 1;
    if size > height || size > width {
        return Err(Error::Dimension(format!(
            "{size}x{size} kernel does not fit a {height}x{width} grid"
        )));
    }
    let r = radius as f64;
    let two_s2 = 2.0 * sigma * sigma;
    let kernel = ImageGrid::from_fn(size, size, |i, j| {
        let (di, dj) = (i as f64 - r, j as f64 - r);
        (-(di * di + dj * dj) / two_s2).exp()
    })?;
    Psf::normalized(kernel, (radius, radius))
}

/// Seeded Poisson sampler: sequential inversion below `λ = 30`, PTRS rejection above.
#[derive(Debug, Clone)]
pub struct PoissonSampler {
    rng: ChaCha8Rng,
}

const INVERSION_LIMIT: f64 = 30.0;

impl PoissonSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample(&mut self, lambda: f64) -> u64 {
        if lambda <= 0.0 {
            0
        } else if lambda < INVERSION_LIMIT {
            self.inversion(lambda)
        } else {
            self.ptrs(lambda)
        }
    }

    fn inversion(&mut self, lambda: f64) -> u64 {
        let u: f64 = self.rng.random();
        let mut k = 0u64;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        // The tail cap only matters when rounding keeps the cdf below u.
        let cap = (lambda + 40.0 * lambda.sqrt() + 40.0) as u64;
        while u > cdf && k < cap {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
        }
        k
    }

    // Hörmann's transformed rejection with squeeze.
    fn ptrs(&mut self, lambda: f64) -> u64 {
        let slam = lambda.sqrt();
        let loglam = lambda.ln();
        let b = 0.931 + 2.53 * slam;
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let v_r = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.rng.random::<f64>() - 0.5;
            let v: f64 = self.rng.random();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
            if us >= 0.07 && v <= v_r {
                return k as u64;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
            let rhs = -lambda + k * loglam - ln_gamma(k + 1.0);
            if lhs <= rhs {
                return k as u64;
            }
        }
    }
}

/// Seeded piecewise-smooth test scene in `[0, 1]`: a shaded background, overlapping
/// ellipses of random intensity and a patch of thin stripes.
pub fn test_pattern(height: usize, width: usize, seed: u64) -> Result<ImageGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f64, width as f64);
    let ellipses: Vec<[f64; 6]> = (0..6)
        .map(|_| {
            [
                rng.random_range(0.15..0.85) * hf,
                rng.random_range(0.15..0.85) * wf,
                rng.random_range(0.08..0.3) * hf,
                rng.random_range(0.08..0.3) * wf,
                rng.random_range(0.0..std::f64::consts::PI),
                rng.random_range(0.25..0.95),
            ]
        })
        .collect();
    let stripe_r0 = rng.random_range(0.05..0.5) * hf;
    let stripe_c0 = rng.random_range(0.05..0.5) * wf;
    ImageGrid::from_fn(height, width, |r, c| {
        let (y, x) = (r as f64, c as f64);
        let mut v = 0.1 + 0.15 * (y / hf) + 0.05 * (x / wf);
        for e in &ellipses {
            let (dy, dx) = (y - e[0], x - e[1]);
            let (s, co) = e[4].sin_cos();
            let u = (dx * co + dy * s) / e[3];
            let t = (-dx * s + dy * co) / e[2];
            if u * u + t * t <= 1.0 {
                v = e[5];
            }
        }
        if y >= stripe_r0 && y < stripe_r0 + 0.25 * hf && x >= stripe_c0 && x < stripe_c0 + 0.25 * wf {
            v = if (c / 2) % 2 == 0 { 0.9 } else { 0.15 };
        }
        v
    })
}

/// Result of [`degrade`].
#[derive(Debug, Clone)]
pub struct Degraded {
    pub g: ImageGrid,
    pub psf: Psf,
    pub otf: Otf,
}

/// Blurs `x_true`, adds the background and draws scaled Poisson counts.
pub fn degrade(x_true: &ImageGrid, spec: &DegradeSpec) -> Result<Degraded> {
    spec.validate()?;
    let (h, w) = x_true.shape();
    if x_true.min_value() < 0.0 || x_true.max_value() > 1.0 {
        log::warn!(
            "ground truth spans [{}, {}], outside the nominal [0, 1] range",
            x_true.min_value(),
            x_true.max_value()
        );
    }
    let psf = gaussian_psf(spec.sigma, spec.radius(), h, w)?;
    let otf = psf_to_otf(&psf, h, w)?;
    let blurred = convolve(&otf, x_true)?;
    // FFT rounding can leave slightly negative values where the image is dark.
    let floor = -1e-12 * (1.0 + x_true.norm_inf());
    let mut sampler = PoissonSampler::new(spec.seed);
    let mut g = Vec::with_capacity(blurred.len());
    for (i, &m) in blurred.values().iter().enumerate() {
        let mean = m + spec.b;
        if mean < floor {
            return Err(Error::Internal(format!("negative Poisson mean {mean} at index {i}")));
        }
        let count = sampler.sample(spec.nu * mean.max(0.0));
        g.push(count as f64 / spec.nu);
    }
    Ok(Degraded {
        g: ImageGrid::from_vec(h, w, g)?,
        psf,
        otf,
    })
}
