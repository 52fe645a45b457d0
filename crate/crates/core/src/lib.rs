//! Poisson image deblurring by ADMM splitting with closed-form deblurring and KL steps and a
//! plug-and-play denoiser in the regularization block.
//!
//! The forward model is `g = Poisson(ν(Hx + b))/ν` with `H` a circular convolution.

// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dct;
pub mod error;
pub mod grid;
pub mod linops;
pub mod metrics;
pub mod proximal;
pub mod simulate;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{Elementwise, ImageGrid, Problem, Psf};
pub use linops::{convolve, convolve_adjoint, psf_to_otf, solve_deblur_system, Otf, SpectralSolver};
pub use metrics::MetricReport;
pub use proximal::{
    check_firm_nonexpansive, dct_softthresh_denoiser, identity_denoiser, kl_value, project_nonneg, prox_kl,
    soft_threshold, Denoiser, FneReport,
};
pub use simulate::{degrade, gaussian_psf, test_pattern, DegradeSpec, Degraded};
pub use solver::{
    compute_residuals, init_state, pidsplit_step, pnpsplit_step, run, update_gamma, GammaSchedule, Residuals,
    RunConfig, RunReport, ScheduleMode, SplitState, StopReason, StrengthPolicy, TraceRow,
};
