use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use pnpsplit_cli::commands::{cmd_degrade, cmd_evaluate, cmd_restore, cmd_sweep};
use pnpsplit_cli::config::{DenoiserSelector, ExperimentConfig};

/// Poisson deblurring with ADMM splitting and a plug-and-play denoiser.
///
/// Settings come from built-in defaults, then `--config`, then flags.
/// Run `pnpsplit defaults` to print every key with its default.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Blur a clean image, add Poisson noise; writes degraded.{pgm,png} and its .toml metadata.
    Degrade,
    /// Restore a degraded image using its metadata; writes restored image, trace.csv, metrics.csv.
    Restore,
    /// Compare --input against --truth and print mse, re, psnr, ssim.
    Evaluate,
    /// Degrade --input once, then restore for each gamma0 in fixed and adaptive mode; writes sweep.csv.
    Sweep,
    /// Print the default configuration file.
    Defaults,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Flat TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Ground-truth image for metrics.
    #[arg(long, global = true)]
    truth: Option<PathBuf>,
    /// Noise seed [default: 0].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// identity | dct | external:<cmd> [default: dct].
    #[arg(long, global = true)]
    denoiser: Option<DenoiserSelector>,
    /// Initial penalty parameter [default: 1000].
    #[arg(long, global = true)]
    gamma0: Option<f64>,
    /// Iteration count K [default: 2500].
    #[arg(long, global = true)]
    iters: Option<usize>,
    /// Residual-balancing schedule for gamma [default: on].
    #[arg(long, global = true)]
    adaptive: Option<OnOff>,
    /// Last iteration at which gamma may change [default: iters / 2].
    #[arg(long, global = true)]
    k_max: Option<usize>,
    /// Count scale; lower is noisier [default: 20].
    #[arg(long, global = true)]
    nu: Option<f64>,
    /// Gaussian PSF standard deviation in pixels [default: 1].
    #[arg(long, global = true)]
    sigma: Option<f64>,
    /// Background level [default: 0].
    #[arg(long, global = true)]
    b: Option<f64>,
    /// Denoiser strength, the product beta * gamma [default: 0.1].
    #[arg(long, global = true)]
    strength: Option<f64>,
    /// Record every n-th iteration in the trace [default: 1].
    #[arg(long, global = true)]
    trace_every: Option<usize>,
    /// Comma-separated gamma0 values for `sweep` [default: 1,10,100,1000].
    #[arg(long, global = true, value_delimiter = ',')]
    gamma0_list: Option<Vec<f64>>,
}

impl Overrides {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { c.$field = v; } )* };
        }
        set!(seed, gamma0, iters, nu, sigma, b, strength, trace_every, gamma0_list);
        c.input = self.input.or(c.input);
        c.output = self.output.or(c.output);
        c.truth = self.truth.or(c.truth);
        c.k_max = self.k_max.or(c.k_max);
        if let Some(d) = self.denoiser {
            c.denoiser = d.to_string();
        }
        if let Some(a) = self.adaptive {
            c.adaptive = matches!(a, OnOff::On);
        }
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    if let Cmd::Defaults = cli.command {
        print!("{}", ExperimentConfig::defaults_toml());
        return Ok(());
    }
    let cfg = cli.overrides.resolve()?;
    log::debug!("{cfg:?}");
    match cli.command {
        Cmd::Degrade => {
            let out = cmd_degrade(&cfg)?;
            println!("{}", out.image.display());
        }
        Cmd::Restore => {
            let out = cmd_restore(&cfg)?;
            println!("{}", out.image.display());
            if let Some(m) = out.metrics {
                println!("mse={} re={} psnr={} ssim={}", m.mse, m.re, m.psnr, m.ssim);
            }
        }
        Cmd::Evaluate => {
            let m = cmd_evaluate(&cfg)?;
            println!("mse={} re={} psnr={} ssim={}", m.mse, m.re, m.psnr, m.ssim);
        }
        Cmd::Sweep => {
            for r in cmd_sweep(&cfg)? {
                println!(
                    "{}\t{}\tpsnr={:.3}\tssim={:.4}",
                    r.gamma0, r.mode, r.metrics.psnr, r.metrics.ssim
                );
            }
        }
        Cmd::Defaults => unreachable!(),
    }
    Ok(())
}
