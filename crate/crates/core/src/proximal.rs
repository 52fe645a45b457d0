//! Closed-form proximal maps and the denoiser abstraction plugged into the `w₂` block.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dct::Dct2d;
use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// Generalized Kullback–Leibler divergence `Σ gᵢ log(gᵢ/wᵢ) + wᵢ − gᵢ`, with `0·log 0 = 0`.
pub fn kl_value(w: &ImageGrid, g: &ImageGrid) -> Result<f64> {
    w.ensure_shape(g, "kl_value")?;
    let mut total = 0.0;
    for (i, (&wi, &gi)) in w.values().iter().zip(g.values()).enumerate() {
        if gi < 0.0 {
            return Err(Error::Domain(format!("negative data {gi} at index {i}")));
        }
        if wi < 0.0 || (wi == 0.0 && gi > 0.0) {
            return Err(Error::Domain(format!(
                "KL argument {wi} at index {i} is not admissible for data {gi}"
            )));
        }
        let term = if gi == 0.0 { wi } else { gi * (gi / wi).ln() + wi - gi };
        total += term.max(0.0);
    }
    Ok(total)
}

/// Scalar KL prox: the minimizer over `w ≥ 0` of `γ(g log(g/w) + w − g) + ½(w − (v + b))²`.
#[inline]
pub fn prox_kl_scalar(v: f64, g: f64, b: f64, gamma: f64) -> f64 {
    let c = v + b - gamma;
    let disc = (c * c + 4.0 * gamma * g).sqrt();
    if c >= 0.0 {
        0.5 * (c + disc)
    } else {
        // Rationalized form avoids cancellation when c is large and negative.
        let denom = disc - c;
        if denom > 0.0 {
            2.0 * gamma * g / denom
        } else {
            0.0
        }
    }
}

/// Closed-form prox of `γ·KL(· , g)` shifted by the background: per pixel,
/// `½(c + √(c² + 4γg))` with `c = v + b − γ`.
pub fn prox_kl(v: &ImageGrid, g: &ImageGrid, b: f64, gamma: f64) -> Result<ImageGrid> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    v.ensure_shape(g, "prox_kl")?;
    if g.min_value() < 0.0 {
        return Err(Error::Domain("prox_kl: data has negative entries".into()));
    }
    Ok(v.zip_map(g, |vi, gi| prox_kl_scalar(vi, gi, b, gamma)))
}

/// Projection onto the nonnegative orthant.
pub fn project_nonneg(v: &ImageGrid) -> ImageGrid {
    v.map(|x| x.max(0.0))
}

#[inline]
fn shrink(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Pointwise `sign(v)·max(|v| − t, 0)`.
pub fn soft_threshold(v: &ImageGrid, t: f64) -> Result<ImageGrid> {
    check_strength(t)?;
    Ok(v.map(|x| shrink(x, t)))
}

fn check_strength(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Parameter(format!(
            "threshold must be finite and nonnegative, got {t}"
        )));
    }
    Ok(())
}

/// A denoising map `D_s` applied in the regularization slot of the splitting.
///
/// Implementations must tolerate concurrent `apply` calls on distinct inputs.
pub trait Denoiser: Send + Sync {
    fn name(&self) -> &str;

    /// Whether the map is known to be firmly non-expansive for every strength.
    fn claims_firmly_nonexpansive(&self) -> bool;

    /// Denoises `v` at `strength`; the output has the shape of `v`.
    fn apply(&self, v: &ImageGrid, strength: f64) -> Result<ImageGrid>;
}

impl<D: Denoiser + ?Sized> Denoiser for Arc<D> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn claims_firmly_nonexpansive(&self) -> bool {
        (**self).claims_firmly_nonexpansive()
    }

    fn apply(&self, v: &ImageGrid, strength: f64) -> Result<ImageGrid> {
        (**self).apply(v, strength)
    }
}

/// `D(v) = v`, the prox of the zero function.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

pub fn identity_denoiser() -> IdentityDenoiser {
    IdentityDenoiser
}

impl Denoiser for IdentityDenoiser {
    fn name(&self) -> &str {
        "identity"
    }

    fn claims_firmly_nonexpansive(&self) -> bool {
        true
    }

    fn apply(&self, v: &ImageGrid, _strength: f64) -> Result<ImageGrid> {
        Ok(v.clone())
    }
}

/// Soft thresholding of orthonormal DCT coefficients: the prox of `s·‖Wv‖₁`.
#[derive(Debug, Default)]
pub struct DctSoftThreshold {
    plans: Mutex<HashMap<(usize, usize), Arc<Dct2d>>>,
}

pub fn dct_softthresh_denoiser() -> DctSoftThreshold {
    DctSoftThreshold::default()
}

impl DctSoftThreshold {
    fn plan(&self, shape: (usize, usize)) -> Arc<Dct2d> {
        let mut plans = self.plans.lock().unwrap_or_else(|e| e.into_inner());
        plans
            .entry(shape)
            .or_insert_with(|| Arc::new(Dct2d::new(shape.0, shape.1)))
            .clone()
    }
}

impl Denoiser for DctSoftThreshold {
    fn name(&self) -> &str {
        "dct"
    }

    fn claims_firmly_nonexpansive(&self) -> bool {
        true
    }

    fn apply(&self, v: &ImageGrid, strength: f64) -> Result<ImageGrid> {
        check_strength(strength)?;
        let dct = self.plan(v.shape());
        let mut coeffs = dct.forward_grid(v);
        for c in coeffs.iter_mut() {
            *c = shrink(*c, strength);
        }
        dct.inverse(&mut coeffs);
        Ok(ImageGrid::from_raw(v.height(), v.width(), coeffs))
    }
}

/// Pixel-domain soft thresholding at the given strength.
#[derive(Debug, Clone, Copy, Default)]
pub struct SoftThresholdDenoiser;

impl Denoiser for SoftThresholdDenoiser {
    fn name(&self) -> &str {
        "soft-threshold"
    }

    fn claims_firmly_nonexpansive(&self) -> bool {
        true
    }

    fn apply(&self, v: &ImageGrid, strength: f64) -> Result<ImageGrid> {
        soft_threshold(v, strength)
    }
}

/// Projection onto `v ≥ 0`; the strength is ignored.
#[derive(Debug, Clone, Copy, Default)]
pub struct NonnegProjection;

impl Denoiser for NonnegProjection {
    fn name(&self) -> &str {
        "nonneg-projection"
    }

    fn claims_firmly_nonexpansive(&self) -> bool {
        true
    }

    fn apply(&self, v: &ImageGrid, _strength: f64) -> Result<ImageGrid> {
        Ok(project_nonneg(v))
    }
}

/// Absolute slack on `‖Da − Db‖² ≤ ⟨Da − Db, a − b⟩`.
pub const FNE_TOL: f64 = 1e-9;

/// Outcome of an empirical firm non-expansiveness test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FneReport {
    pub pairs: usize,
    pub violations: usize,
    /// Smallest `⟨Da − Db, a − b⟩ − ‖Da − Db‖²` seen; negative values indicate expansion.
    pub worst_margin: f64,
}

/// Probes `‖D(a) − D(b)‖² ≤ ⟨D(a) − D(b), a − b⟩` on seeded random pairs of `height × width` grids.
///
/// Each `a` is uniform noise in `[0, 1]` plus a Gaussian perturbation; `b` is `a` plus a second
/// Gaussian perturbation. Perturbation scales are log-uniform in `[1e-3, 1]`.
pub fn check_firm_nonexpansive<D: Denoiser + ?Sized>(
    d: &D,
    strength: f64,
    height: usize,
    width: usize,
    num_pairs: usize,
    seed: u64,
) -> Result<FneReport> {
    if num_pairs == 0 {
        return Err(Error::Parameter("num_pairs must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = height * width;
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..num_pairs {
        let s_a = 10f64.powf(rng.random_range(-3.0..=0.0));
        let s_b = 10f64.powf(rng.random_range(-3.0..=0.0));
        let a: Vec<f64> = (0..n)
            .map(|_| rng.random::<f64>() + s_a * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let b: Vec<f64> = a
            .iter()
            .map(|&ai| ai + s_b * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let a = ImageGrid::from_vec(height, width, a)?;
        let b = ImageGrid::from_vec(height, width, b)?;
        let da = d.apply(&a, strength)?;
        let db = d.apply(&b, strength)?;
        let mut sq = 0.0;
        let mut inner = 0.0;
        for i in 0..n {
            let dd = da.values()[i] - db.values()[i];
            sq += dd * dd;
            inner += dd * (a.values()[i] - b.values()[i]);
        }
        let margin = inner - sq;
        if sq > inner + FNE_TOL {
            violations += 1;
        }
        worst = worst.min(margin);
    }
    Ok(FneReport {
        pairs: num_pairs,
        violations,
        worst_margin: worst,
    })
}
