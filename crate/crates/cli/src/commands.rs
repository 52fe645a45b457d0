use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use pnpsplit::metrics::evaluate;
use pnpsplit::{degrade, gaussian_psf, run, MetricReport, Problem, RunReport, TraceRow};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::imageio::{quantize, read_planes, write_u16, write_unit_planes, Planes};

pub const TRACE_HEADER: [&str; 5] = ["k", "gamma", "primal", "dual", "kl"];
pub const METRICS_HEADER: [&str; 4] = ["mse", "re", "psnr", "ssim"];
pub const SWEEP_HEADER: [&str; 6] = ["gamma0", "mode", "mse", "re", "psnr", "ssim"];

/// Everything needed to restore a degraded image, stored next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradeMeta {
    pub sigma: f64,
    pub radius: usize,
    pub b: f64,
    pub nu: f64,
    /// Seed of channel 0; channel `c` uses `seed + c`.
    pub seed: u64,
    /// Observed intensity = stored 16-bit value / scale.
    pub scale: f64,
    pub channels: usize,
    pub source: String,
}

pub fn sidecar_path(image: &Path) -> PathBuf {
    image.with_extension("toml")
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .with_context(|| format!("missing `{what}` (set it in the config or on the command line)"))
}

fn output_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = required(&cfg.output, "output")?.to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn image_extension(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "png",
        _ => "pgm",
    }
}

fn fmt(v: f64) -> String {
    // Shortest representation that parses back to the same bits.
    format!("{v}")
}

#[derive(Debug, Clone)]
pub struct DegradeOutput {
    pub image: PathBuf,
    pub meta: DegradeMeta,
}

pub fn cmd_degrade(cfg: &ExperimentConfig) -> Result<DegradeOutput> {
    let input = required(&cfg.input, "input")?;
    let planes = read_planes(input)?;
    let out_dir = output_dir(cfg)?;
    let spec = cfg.degrade_spec();
    let mut observed = Vec::new();
    for (c, x) in planes.channels.iter().enumerate() {
        let mut s = spec;
        s.seed = spec.seed.wrapping_add(c as u64);
        observed.push(degrade(x, &s).with_context(|| format!("degrading channel {c}"))?.g);
    }
    // Integer counts are stored exactly when they fit 16 bits.
    let g_max = observed.iter().map(|g| g.max_value()).fold(0.0, f64::max);
    let scale = if g_max * spec.nu <= 65535.0 {
        spec.nu
    } else {
        log::warn!("counts exceed 16 bits; storing g rescaled by {}", 65535.0 / g_max);
        65535.0 / g_max
    };
    let quantized = observed
        .iter()
        .map(|g| quantize(g, scale))
        .collect::<Result<Vec<_>>>()?;
    let (h, w) = planes.shape();
    let image = out_dir.join(format!("degraded.{}", image_extension(input)));
    write_u16(&image, h, w, &quantized)?;
    let meta = DegradeMeta {
        sigma: spec.sigma,
        radius: spec.radius(),
        b: spec.b,
        nu: spec.nu,
        seed: spec.seed,
        scale,
        channels: planes.channels.len(),
        source: input.display().to_string(),
    };
    let sidecar = sidecar_path(&image);
    fs::write(&sidecar, toml::to_string(&meta)?).with_context(|| format!("writing {}", sidecar.display()))?;
    log::info!("wrote {} and {}", image.display(), sidecar.display());
    Ok(DegradeOutput { image, meta })
}

pub fn read_degraded(image: &Path) -> Result<(Planes, DegradeMeta)> {
    let sidecar = sidecar_path(image);
    let text = fs::read_to_string(&sidecar).with_context(|| format!("reading metadata {}", sidecar.display()))?;
    let meta: DegradeMeta = toml::from_str(&text).with_context(|| format!("parsing {}", sidecar.display()))?;
    let mut planes = read_planes(image)?;
    if planes.channels.len() != meta.channels {
        bail!(
            "{} has {} channels, metadata says {}",
            image.display(),
            planes.channels.len(),
            meta.channels
        );
    }
    let fmax = planes.format_max;
    for ch in planes.channels.iter_mut() {
        *ch = pnpsplit::ImageGrid::from_vec(
            ch.height(),
            ch.width(),
            ch.values().iter().map(|v| (v * fmax).round() / meta.scale).collect(),
        )?;
    }
    Ok((planes, meta))
}

fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(TRACE_HEADER)?;
    for r in trace {
        w.write_record([r.k.to_string(), fmt(r.gamma), fmt(r.primal), fmt(r.dual), fmt(r.kl)])?;
    }
    w.flush()?;
    Ok(())
}

fn write_metrics(path: &Path, m: &MetricReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(METRICS_HEADER)?;
    w.write_record([fmt(m.mse), fmt(m.re), fmt(m.psnr), fmt(m.ssim)])?;
    w.flush()?;
    Ok(())
}

fn channel_metrics(truth: &Planes, restored: &[pnpsplit::ImageGrid]) -> Result<MetricReport> {
    if truth.channels.len() != restored.len() || truth.shape() != restored[0].shape() {
        bail!("ground truth does not match the restored image in shape or channel count");
    }
    let reports = truth
        .channels
        .iter()
        .zip(restored)
        .map(|(t, r)| evaluate(t, r, 1.0))
        .collect::<pnpsplit::Result<Vec<_>>>()?;
    Ok(MetricReport::average(&reports).expect("at least one channel"))
}

#[derive(Debug)]
pub struct RestoreOutput {
    pub image: PathBuf,
    pub traces: Vec<PathBuf>,
    pub reports: Vec<RunReport>,
    pub metrics: Option<MetricReport>,
}

pub fn cmd_restore(cfg: &ExperimentConfig) -> Result<RestoreOutput> {
    let input = required(&cfg.input, "input")?;
    let (planes, meta) = read_degraded(input)?;
    let out_dir = output_dir(cfg)?;
    let (h, w) = planes.shape();
    let psf = gaussian_psf(meta.sigma, meta.radius, h, w)?;
    let selector = cfg.selector()?;
    let mut reports = Vec::new();
    for (c, g) in planes.channels.iter().enumerate() {
        let problem = Problem::new(g.clone(), &psf, meta.b)?;
        let run_cfg = cfg.run_config(selector.build()?, cfg.gamma0, cfg.adaptive);
        let report = run(&problem, &run_cfg).with_context(|| format!("restoring channel {c}"))?;
        log::info!(
            "channel {c}: {} iterations, final gamma {}",
            report.iterations_run,
            report.final_state.gamma
        );
        reports.push(report);
    }
    let restored: Vec<_> = reports.iter().map(|r| r.restored().clone()).collect();
    let image = out_dir.join(format!("restored.{}", image_extension(input)));
    write_unit_planes(&image, &restored)?;
    let mut traces = Vec::new();
    for (c, r) in reports.iter().enumerate() {
        let name = if reports.len() == 1 {
            "trace.csv".to_string()
        } else {
            format!("trace_c{c}.csv")
        };
        let path = out_dir.join(name);
        write_trace(&path, &r.trace)?;
        traces.push(path);
    }
    let metrics = match &cfg.truth {
        Some(t) => {
            let m = channel_metrics(&read_planes(t)?, &restored)?;
            write_metrics(&out_dir.join("metrics.csv"), &m)?;
            Some(m)
        }
        None => None,
    };
    Ok(RestoreOutput {
        image,
        traces,
        reports,
        metrics,
    })
}

/// Compares `input` against `truth`; writes `metrics.csv` when an output directory is set.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<MetricReport> {
    let truth = read_planes(required(&cfg.truth, "truth")?)?;
    let rec = read_planes(required(&cfg.input, "input")?)?;
    let m = channel_metrics(&truth, &rec.channels)?;
    if cfg.output.is_some() {
        write_metrics(&output_dir(cfg)?.join("metrics.csv"), &m)?;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub gamma0: f64,
    pub mode: &'static str,
    pub metrics: MetricReport,
}

/// Degrades the ground truth once, then restores it for every `γ⁰` in fixed and adaptive mode.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let input = required(&cfg.input, "input")?;
    let truth = read_planes(input)?;
    let out_dir = output_dir(cfg)?;
    let spec = cfg.degrade_spec();
    let (h, w) = truth.shape();
    let psf = gaussian_psf(spec.sigma, spec.radius(), h, w)?;
    let mut problems = Vec::new();
    for (c, x) in truth.channels.iter().enumerate() {
        let mut s = spec;
        s.seed = spec.seed.wrapping_add(c as u64);
        problems.push(Problem::new(degrade(x, &s)?.g, &psf, spec.b)?);
    }
    let selector = cfg.selector()?;
    let cells: Vec<(f64, bool)> = cfg
        .gamma0_list
        .iter()
        .flat_map(|&g0| [(g0, false), (g0, true)])
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(gamma0, adaptive)| -> Result<SweepRow> {
            // One denoiser per cell, so external bridges are never shared between runs.
            let denoiser = selector.build()?;
            let restored = problems
                .iter()
                .map(|p| {
                    let rc = cfg.run_config(denoiser.clone(), gamma0, adaptive);
                    Ok(run(p, &rc)?.restored().clone())
                })
                .collect::<Result<Vec<_>>>()
                .with_context(|| format!("gamma0 = {gamma0}, adaptive = {adaptive}"))?;
            Ok(SweepRow {
                gamma0,
                mode: if adaptive { "adaptive" } else { "fixed" },
                metrics: channel_metrics(&truth, &restored)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let path = out_dir.join("sweep.csv");
    let mut wtr = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    wtr.write_record(SWEEP_HEADER)?;
    for r in &rows {
        let m = &r.metrics;
        wtr.write_record([
            fmt(r.gamma0),
            r.mode.to_string(),
            fmt(m.mse),
            fmt(m.re),
            fmt(m.psnr),
            fmt(m.ssim),
        ])?;
    }
    wtr.flush()?;
    Ok(rows)
}
