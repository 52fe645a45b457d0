//! Reading and writing 8/16-bit grayscale or RGB images as `[0, 1]` planes.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{ColorType, DynamicImage, ImageBuffer, Luma, Rgb};
use pnpsplit::ImageGrid;

/// One grid per color channel, values divided by the format maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub channels: Vec<ImageGrid>,
    /// 255 or 65535.
    pub format_max: f64,
}

impl Planes {
    pub fn shape(&self) -> (usize, usize) {
        self.channels[0].shape()
    }
}

pub fn read_planes(path: &Path) -> Result<Planes> {
    let img = image::ImageReader::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .with_guessed_format()
        .with_context(|| format!("reading {}", path.display()))?
        .decode()
        .with_context(|| format!("decoding {}", path.display()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let color = img.color();
    let gray = matches!(color, ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16);
    let deep = matches!(
        color,
        ColorType::L16 | ColorType::La16 | ColorType::Rgb16 | ColorType::Rgba16
    );
    if !deep && color.bytes_per_pixel() / color.channel_count() != 1 {
        bail!("{}: unsupported pixel format {color:?}", path.display());
    }
    let format_max = if deep { 65535.0 } else { 255.0 };
    let (raw, n_ch): (Vec<u16>, usize) = if gray {
        (img.into_luma16().into_raw(), 1)
    } else {
        (img.into_rgb16().into_raw(), 3)
    };
    // into_*16 widens 8-bit data by ×257, so dividing by 65535 yields v/255 exactly as stored.
    let channels = (0..n_ch)
        .map(|c| {
            ImageGrid::from_fn(h, w, |r, col| raw[(r * w + col) * n_ch + c] as f64 / 65535.0)
                .map_err(anyhow::Error::from)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Planes { channels, format_max })
}

/// Writes integer planes as a 16-bit image; the format follows the file extension.
pub fn write_u16(path: &Path, height: usize, width: usize, channels: &[Vec<u16>]) -> Result<()> {
    let (w, h) = (width as u32, height as u32);
    let img = match channels {
        [gray] => {
            DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, gray.clone()).context("plane size")?)
        }
        [r, g, b] => {
            let mut data = Vec::with_capacity(height * width * 3);
            for i in 0..height * width {
                data.extend_from_slice(&[r[i], g[i], b[i]]);
            }
            DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, data).context("plane size")?)
        }
        _ => bail!("cannot write {} channels", channels.len()),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Quantizes `v·scale` to 16 bits, rejecting values that do not fit.
pub fn quantize(grid: &ImageGrid, scale: f64) -> Result<Vec<u16>> {
    grid.values()
        .iter()
        .map(|&v| {
            let q = (v * scale).round();
            if !(0.0..=65535.0).contains(&q) {
                bail!("value {v} scaled by {scale} does not fit 16 bits");
            }
            Ok(q as u16)
        })
        .collect()
}

/// Writes `[0, 1]` planes at 16 bits, clipping values outside that range.
pub fn write_unit_planes(path: &Path, channels: &[ImageGrid]) -> Result<()> {
    let (h, w) = channels[0].shape();
    let quantized: Vec<Vec<u16>> = channels
        .iter()
        .map(|g| {
            g.values()
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
                .collect()
        })
        .collect();
    write_u16(path, h, w, &quantized)
}
