//! Image quality indices: MSE, relative error, PSNR and SSIM.

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// SSIM window side and Gaussian width (Wang et al. 2004 defaults).
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mse: f64,
    pub re: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricReport {
    /// Channel-wise average.
    pub fn average(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let sum = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricReport {
            mse: sum(|r| r.mse),
            re: sum(|r| r.re),
            psnr: sum(|r| r.psnr),
            ssim: sum(|r| r.ssim),
        })
    }
}

pub fn mse(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    a.ensure_shape(b, "mse")?;
    let d = a.distance(b)?;
    Ok(d * d / a.len() as f64)
}

/// `‖x_true − x_rec‖₂ / ‖x_true‖₂`.
pub fn relative_error(x_true: &ImageGrid, x_rec: &ImageGrid) -> Result<f64> {
    x_true.ensure_shape(x_rec, "relative_error")?;
    let norm = x_true.norm2();
    if norm == 0.0 {
        return Err(Error::Domain(
            "relative error undefined for an all-zero reference".into(),
        ));
    }
    Ok(x_true.distance(x_rec)? / norm)
}

/// PSNR for a given MSE, capped at `cap` dB when the MSE vanishes.
pub fn psnr_from_mse(mse: f64, data_range: f64, cap: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(Error::Parameter(format!(
            "data range must be positive, got {data_range}"
        )));
    }
    if mse <= 0.0 {
        return Ok(cap);
    }
    Ok((10.0 * (data_range * data_range / mse).log10()).min(cap))
}

pub fn psnr(x_true: &ImageGrid, x_rec: &ImageGrid, data_range: f64) -> Result<f64> {
    psnr_from_mse(mse(x_true, x_rec)?, data_range, PSNR_CAP_DB)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

// Separable "valid" filtering: output is (h − 10) × (w − 10).
fn filter_valid(data: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WINDOW).map(|k| win[k] * data[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|k| win[k] * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully contained 11×11 Gaussian windows.
pub fn ssim(x_true: &ImageGrid, x_rec: &ImageGrid, data_range: f64) -> Result<f64> {
    x_true.ensure_shape(x_rec, "ssim")?;
    if !(data_range > 0.0) {
        return Err(Error::Parameter(format!(
            "data range must be positive, got {data_range}"
        )));
    }
    let (h, w) = x_true.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let a = x_true.values();
    let b = x_rec.values();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, h, w, &win);
    let mu_b = filter_valid(b, h, w, &win);
    let e_aa = filter_valid(&aa, h, w, &win);
    let e_bb = filter_valid(&bb, h, w, &win);
    let e_ab = filter_valid(&ab, h, w, &win);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// All four indices at once.
pub fn evaluate(x_true: &ImageGrid, x_rec: &ImageGrid, data_range: f64) -> Result<MetricReport> {
    let m = mse(x_true, x_rec)?;
    Ok(MetricReport {
        mse: m,
        re: relative_error(x_true, x_rec)?,
        psnr: psnr_from_mse(m, data_range, PSNR_CAP_DB)?,
        ssim: ssim(x_true, x_rec, data_range)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(h: usize, w: usize, phase: f64) -> ImageGrid {
        ImageGrid::from_fn(h, w, |r, c| {
            0.5 + 0.4 * ((r as f64 * 0.7 + c as f64 * 0.3 + phase).sin())
        })
        .unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = ImageGrid::new(4, 4, 0.3).unwrap();
        let b = ImageGrid::new(4, 4, 0.4).unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn relative_error_examples() {
        let x = pattern(5, 5, 0.0);
        assert_eq!(relative_error(&x, &x).unwrap(), 0.0);
        let zero = ImageGrid::zeros(5, 5).unwrap();
        assert!((relative_error(&x, &zero).unwrap() - 1.0).abs() < 1e-15);
        assert!((relative_error(&x, &x.scaled(2.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(relative_error(&zero, &x), Err(Error::Domain(_))));
    }

    #[test]
    fn psnr_examples() {
        assert!((psnr_from_mse(0.01, 1.0, PSNR_CAP_DB).unwrap() - 20.0).abs() < 1e-12);
        let x = pattern(3, 3, 0.0);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), 99.0);
        assert!(psnr_from_mse(0.1, 0.0, PSNR_CAP_DB).is_err());
    }

    #[test]
    fn psnr_decreases_with_mse() {
        let mut last = f64::INFINITY;
        for i in 1..50 {
            let p = psnr_from_mse(i as f64 * 1e-3, 1.0, PSNR_CAP_DB).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = pattern(16, 20, 0.0);
        let b = pattern(16, 20, 1.3);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let ab = ssim(&a, &b, 1.0).unwrap();
        let ba = ssim(&b, &a, 1.0).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab < 1.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = pattern(10, 20, 0.0);
        assert!(matches!(ssim(&a, &a, 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn average_over_channels() {
        let r = MetricReport {
            mse: 1.0,
            re: 2.0,
            psnr: 3.0,
            ssim: 0.5,
        };
        let s = MetricReport {
            mse: 3.0,
            re: 0.0,
            psnr: 5.0,
            ssim: 1.0,
        };
        let avg = MetricReport::average(&[r, s]).unwrap();
        assert_eq!(
            avg,
            MetricReport {
                mse: 2.0,
                re: 1.0,
                psnr: 4.0,
                ssim: 0.75
            }
        );
        assert!(MetricReport::average(&[]).is_none());
    }
}
