//! Flat key-value experiment configuration, read from a TOML file and overridden by flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use pnpsplit::{DegradeSpec, Denoiser, GammaSchedule, RunConfig, ScheduleMode, StrengthPolicy};
use serde::{Deserialize, Serialize};

use crate::external::ExternalDenoiser;

/// Which denoiser fills the regularization block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DenoiserSelector {
    Identity,
    Dct,
    /// Command line of a subprocess speaking the wire protocol.
    External(String),
}

impl std::str::FromStr for DenoiserSelector {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "dct" => Ok(Self::Dct),
            _ => match s.strip_prefix("external:") {
                Some(cmd) if !cmd.trim().is_empty() => Ok(Self::External(cmd.trim().to_string())),
                Some(_) => bail!("`external:` needs a command"),
                None => bail!("unknown denoiser `{s}`; expected identity, dct or external:<cmd>"),
            },
        }
    }
}

impl std::fmt::Display for DenoiserSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Identity => f.write_str("identity"),
            Self::Dct => f.write_str("dct"),
            Self::External(cmd) => write!(f, "external:{cmd}"),
        }
    }
}

impl DenoiserSelector {
    /// Builds a fresh denoiser. External selectors spawn a new subprocess on each call.
    pub fn build(&self) -> Result<Arc<dyn Denoiser>> {
        Ok(match self {
            Self::Identity => Arc::new(pnpsplit::identity_denoiser()),
            Self::Dct => Arc::new(pnpsplit::dct_softthresh_denoiser()),
            Self::External(cmd) => Arc::new(ExternalDenoiser::spawn(cmd)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Ground truth for metrics.
    pub truth: Option<PathBuf>,
    pub seed: u64,
    pub denoiser: String,
    pub gamma0: f64,
    pub iters: usize,
    pub adaptive: bool,
    /// Defaults to `iters / 2`.
    pub k_max: Option<usize>,
    pub alpha: f64,
    pub mu: f64,
    pub literal_schedule: bool,
    pub strength: f64,
    pub trace_every: usize,
    pub residual_tol: f64,
    pub nu: f64,
    pub sigma: f64,
    /// Defaults to `ceil(4σ)`.
    pub radius: Option<usize>,
    pub b: f64,
    pub gamma0_list: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: None,
            truth: None,
            seed: 0,
            denoiser: "dct".into(),
            gamma0: 1000.0,
            iters: 2500,
            adaptive: true,
            k_max: None,
            alpha: 1.001,
            mu: 1.001,
            literal_schedule: false,
            strength: 0.1,
            trace_every: 1,
            residual_tol: 0.0,
            nu: 20.0,
            sigma: 1.0,
            radius: None,
            b: 0.0,
            gamma0_list: vec![1.0, 10.0, 100.0, 1000.0],
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// The defaults as a config file, `k_max` spelled out.
    pub fn defaults_toml() -> String {
        let mut d = Self::default();
        d.k_max = Some(d.iters / 2);
        toml::to_string(&d).expect("default config serializes")
    }

    pub fn selector(&self) -> Result<DenoiserSelector> {
        self.denoiser.parse()
    }

    pub fn k_max(&self) -> usize {
        self.k_max.unwrap_or(self.iters / 2)
    }

    pub fn degrade_spec(&self) -> DegradeSpec {
        DegradeSpec {
            sigma: self.sigma,
            kernel_radius: self.radius,
            b: self.b,
            nu: self.nu,
            seed: self.seed,
        }
    }

    pub fn schedule(&self, adaptive: bool) -> GammaSchedule {
        GammaSchedule {
            alpha: self.alpha,
            mu: self.mu,
            k_max: self.k_max(),
            mode: if adaptive {
                ScheduleMode::Adaptive
            } else {
                ScheduleMode::Fixed
            },
            literal: self.literal_schedule,
        }
    }

    pub fn run_config(&self, denoiser: Arc<dyn Denoiser>, gamma0: f64, adaptive: bool) -> RunConfig {
        let mut cfg = RunConfig::new(denoiser);
        cfg.max_iter = self.iters;
        cfg.gamma0 = gamma0;
        cfg.schedule = self.schedule(adaptive);
        cfg.strength_policy = StrengthPolicy::FixedProduct(self.strength);
        cfg.residual_tol = self.residual_tol;
        cfg.trace_every = self.trace_every;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.selector()?;
        for (name, p) in [("input", &self.input), ("output", &self.output), ("truth", &self.truth)] {
            if p.as_ref().is_some_and(|p| p.as_os_str().is_empty()) {
                bail!("`{name}` path is empty");
            }
        }
        if self.gamma0_list.is_empty() {
            bail!("gamma0_list is empty");
        }
        self.run_config(Arc::new(pnpsplit::identity_denoiser()), self.gamma0, self.adaptive)
            .validate()?;
        Ok(())
    }
}
