//! ADMM engines for `min KL(Hx + b, g) + βR(x)` subject to `x ≥ 0`.
//!
//! The problem is split with `M = (H; I; I)` and constraints `Hx = w₁ − b`, `x = w₂`, `x = w₃`.
//! Multipliers are kept in scaled form, so every update is
//!
//! ```text
//! x  ← (HᵀH + 2I)⁻¹ [Hᵀ(w₁ − b − λ₁) + (w₂ − λ₂) + (w₃ − λ₃)]
//! w₁ ← prox_{γ KL(·, g)}(Hx + λ₁)            (background added inside the prox)
//! w₂ ← D_s(x + λ₂)                           (denoiser, or prox of βγR)
//! w₃ ← max(x + λ₃, 0)
//! λ  ← λ + Mx − w                            (block 1 carries the −b shift)
//! ```
//!
//! followed by residual balancing of `γ`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Problem};
use crate::linops::{convolve, convolve_adjoint, solve_deblur_system};
use crate::proximal::{kl_value, project_nonneg, prox_kl, Denoiser};

/// Complete iterate of the three-block splitting.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitState {
    pub x: ImageGrid,
    pub w1: ImageGrid,
    pub w2: ImageGrid,
    pub w3: ImageGrid,
    pub l1: ImageGrid,
    pub l2: ImageGrid,
    pub l3: ImageGrid,
    pub gamma: f64,
    pub k: usize,
}

impl SplitState {
    fn blocks(&self) -> [(&'static str, &ImageGrid); 7] {
        [
            ("x", &self.x),
            ("w1", &self.w1),
            ("w2", &self.w2),
            ("w3", &self.w3),
            ("lambda1", &self.l1),
            ("lambda2", &self.l2),
            ("lambda3", &self.l3),
        ]
    }

    fn check_shape(&self, problem: &Problem) -> Result<()> {
        for (name, grid) in self.blocks() {
            if grid.shape() != problem.shape() {
                return Err(Error::Dimension(format!(
                    "state block {name} is {:?}, problem is {:?}",
                    grid.shape(),
                    problem.shape()
                )));
            }
        }
        Ok(())
    }

    fn check_finite(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(Error::Divergence {
                iteration: self.k,
                block: "gamma",
            });
        }
        for (name, grid) in self.blocks() {
            if !grid.is_finite() {
                return Err(Error::Divergence {
                    iteration: self.k,
                    block: name,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    Adaptive,
    Fixed,
}

/// Residual-balancing rule for `γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaSchedule {
    pub alpha: f64,
    pub mu: f64,
    /// Last iteration at which `γ` may change.
    pub k_max: usize,
    pub mode: ScheduleMode,
    /// Use the reciprocal `α/γ` in the primal-dominated branch instead of `γ/α`.
    pub literal: bool,
}

impl Default for GammaSchedule {
    fn default() -> Self {
        Self {
            alpha: 1.001,
            mu: 1.001,
            k_max: 1250,
            mode: ScheduleMode::Adaptive,
            literal: false,
        }
    }
}

impl GammaSchedule {
    pub fn fixed() -> Self {
        Self {
            mode: ScheduleMode::Fixed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0) || !(self.mu > 1.0) {
            return Err(Error::Parameter(format!(
                "schedule needs alpha > 1 and mu > 1, got alpha = {}, mu = {}",
                self.alpha, self.mu
            )));
        }
        Ok(())
    }
}

/// How the denoiser strength follows `γ` across iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StrengthPolicy {
    /// Strength `βγᵏ` held at this constant (β implicitly rescaled every iteration).
    FixedProduct(f64),
    /// Fixed `β`; strength `βγᵏ` drifts with `γ`. This is the PIDSplit+ setting.
    FixedBeta(f64),
}

impl StrengthPolicy {
    pub fn strength(&self, gamma: f64) -> f64 {
        match *self {
            StrengthPolicy::FixedProduct(s) => s,
            StrengthPolicy::FixedBeta(beta) => beta * gamma,
        }
    }
}

#[derive(Clone)]
pub struct RunConfig {
    pub max_iter: usize,
    pub gamma0: f64,
    pub schedule: GammaSchedule,
    pub denoiser: Arc<dyn Denoiser>,
    pub strength_policy: StrengthPolicy,
    /// Stop once both residuals fall below this; 0 disables.
    pub residual_tol: f64,
    pub trace_every: usize,
}

impl fmt::Debug for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RunConfig")
            .field("max_iter", &self.max_iter)
            .field("gamma0", &self.gamma0)
            .field("schedule", &self.schedule)
            .field("denoiser", &self.denoiser.name())
            .field("strength_policy", &self.strength_policy)
            .field("residual_tol", &self.residual_tol)
            .field("trace_every", &self.trace_every)
            .finish()
    }
}

impl RunConfig {
    /// Defaults: 2500 iterations, `γ⁰ = 1000`, adaptive schedule with `α = μ = 1.001`,
    /// `k_max = 1250`, strength fixed at 0.1, no residual stopping.
    pub fn new(denoiser: Arc<dyn Denoiser>) -> Self {
        Self {
            max_iter: 2500,
            gamma0: 1000.0,
            schedule: GammaSchedule::default(),
            denoiser,
            strength_policy: StrengthPolicy::FixedProduct(0.1),
            residual_tol: 0.0,
            trace_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be at least 1".into()));
        }
        if !(self.gamma0 > 0.0) || !self.gamma0.is_finite() {
            return Err(Error::Parameter(format!(
                "gamma0 must be positive, got {}",
                self.gamma0
            )));
        }
        if self.trace_every == 0 {
            return Err(Error::Parameter("trace_every must be at least 1".into()));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(Error::Parameter("residual_tol must be nonnegative".into()));
        }
        let s = match self.strength_policy {
            StrengthPolicy::FixedProduct(s) | StrengthPolicy::FixedBeta(s) => s,
        };
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::Parameter(format!(
                "denoiser strength must be nonnegative, got {s}"
            )));
        }
        self.schedule.validate()
    }
}

/// One sampled iteration of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub gamma: f64,
    pub primal: f64,
    pub dual: f64,
    /// `KL(H w₃ + b, g)`.
    pub kl: f64,
    /// `‖wᵏ − wᵏ⁻¹‖₂` over the stacked blocks.
    pub change_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIter,
    ResidualTol,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub final_state: SplitState,
    pub trace: Vec<TraceRow>,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
}

impl RunReport {
    /// The iterate on which quality indices are reported.
    pub fn restored(&self) -> &ImageGrid {
        &self.final_state.w3
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
}

/// Starts from `x⁰ = g`, `w⁰ = Mx⁰` (with background on block 1) and zero multipliers.
pub fn init_state(problem: &Problem, gamma0: f64) -> Result<SplitState> {
    if !(gamma0 > 0.0) || !gamma0.is_finite() {
        return Err(Error::Parameter(format!("gamma0 must be positive, got {gamma0}")));
    }
    let g = problem.g();
    let zeros = ImageGrid::zeros(g.height(), g.width())?;
    let w1 = convolve(problem.otf(), g)?.offset(problem.background());
    Ok(SplitState {
        x: g.clone(),
        w1,
        w2: g.clone(),
        w3: g.clone(),
        l1: zeros.clone(),
        l2: zeros.clone(),
        l3: zeros,
        gamma: gamma0,
        k: 0,
    })
}

fn split_step(
    state: &SplitState,
    problem: &Problem,
    regularize: impl FnOnce(&ImageGrid) -> Result<ImageGrid>,
) -> Result<SplitState> {
    state.check_shape(problem)?;
    let b = problem.background();
    let otf = problem.otf();

    let data_term = state.w1.zip_map(&state.l1, |w, l| w - b - l);
    let mut rhs = convolve_adjoint(otf, &data_term)?;
    let w2_term = state.w2.zip_map(&state.l2, |w, l| w - l);
    let w3_term = state.w3.zip_map(&state.l3, |w, l| w - l);
    rhs = rhs.zip_map(&w2_term, |a, c| a + c).zip_map(&w3_term, |a, c| a + c);
    let x = solve_deblur_system(problem.spectral_solver(), &rhs)?;

    let hx = convolve(otf, &x)?;
    let w1 = prox_kl(&hx.zip_map(&state.l1, |a, l| a + l), problem.g(), b, state.gamma)?;
    let w2 = regularize(&x.zip_map(&state.l2, |a, l| a + l))?;
    if w2.shape() != x.shape() {
        return Err(Error::Dimension(format!(
            "regularizer returned {:?} for a {:?} input",
            w2.shape(),
            x.shape()
        )));
    }
    let w3 = project_nonneg(&x.zip_map(&state.l3, |a, l| a + l));

    let mut l1 = state.l1.zip_map(&hx, |l, h| l + h);
    l1 = l1.zip_map(&w1, |l, w| l - (w - b));
    let l2 = state.l2.zip_map(&x, |l, a| l + a).zip_map(&w2, |l, w| l - w);
    let l3 = state.l3.zip_map(&x, |l, a| l + a).zip_map(&w3, |l, w| l - w);

    Ok(SplitState {
        x,
        w1,
        w2,
        w3,
        l1,
        l2,
        l3,
        gamma: state.gamma,
        k: state.k + 1,
    })
}

/// One PnPSplit+ iteration with the denoiser applied at `strength`. `γ` is left unchanged.
pub fn pnpsplit_step(
    state: &SplitState,
    problem: &Problem,
    denoiser: &dyn Denoiser,
    strength: f64,
) -> Result<SplitState> {
    split_step(state, problem, |v| denoiser.apply(v, strength))
}

/// One PIDSplit+ iteration: `w₂ = prox_{βγR}(x + λ₂)`, with the prox supplied as a
/// [`Denoiser`] whose strength is the threshold `βγ`.
pub fn pidsplit_step(
    state: &SplitState,
    problem: &Problem,
    prox_regularizer: &dyn Denoiser,
    beta: f64,
) -> Result<SplitState> {
    if !(beta >= 0.0) {
        return Err(Error::Parameter(format!("beta must be nonnegative, got {beta}")));
    }
    pnpsplit_step(state, problem, prox_regularizer, beta * state.gamma)
}

/// Primal residual `‖Mx − w + (b, 0, 0)‖` and dual residual `‖Mᵀ(w − w_prev)‖/γ`.
pub fn compute_residuals(
    prev_w: (&ImageGrid, &ImageGrid, &ImageGrid),
    state: &SplitState,
    problem: &Problem,
) -> Result<Residuals> {
    state.check_shape(problem)?;
    let (p1, p2, p3) = prev_w;
    for prev in [p1, p2, p3] {
        prev.ensure_shape(&state.x, "compute_residuals")?;
    }
    let primal = primal_residual(state, problem)?;
    let d1 = state.w1.zip_map(p1, |a, b| a - b);
    let mut mt = convolve_adjoint(problem.otf(), &d1)?;
    mt = mt
        .zip_map(&state.w2, |a, w| a + w)
        .zip_map(p2, |a, w| a - w)
        .zip_map(&state.w3, |a, w| a + w)
        .zip_map(p3, |a, w| a - w);
    Ok(Residuals {
        primal,
        dual: mt.norm2() / state.gamma,
    })
}

fn primal_residual(state: &SplitState, problem: &Problem) -> Result<f64> {
    let b = problem.background();
    let hx = convolve(problem.otf(), &state.x)?;
    let r1 = hx.zip_map(&state.w1, |h, w| h - (w - b)).norm2();
    let r2 = state.x.distance(&state.w2)?;
    let r3 = state.x.distance(&state.w3)?;
    Ok((r1 * r1 + r2 * r2 + r3 * r3).sqrt())
}

/// Residual balancing: shrink `γ` by `α` when the primal residual dominates, grow it when the
/// dual residual dominates, and freeze it after `k_max`.
pub fn update_gamma(gamma: f64, primal: f64, dual: f64, sched: &GammaSchedule, k: usize) -> f64 {
    if sched.mode == ScheduleMode::Fixed || k > sched.k_max {
        return gamma;
    }
    if primal > sched.mu * dual {
        if sched.literal {
            sched.alpha / gamma
        } else {
            gamma / sched.alpha
        }
    } else if dual > sched.mu * primal {
        gamma * sched.alpha
    } else {
        gamma
    }
}

fn observed_kl(state: &SplitState, problem: &Problem) -> Result<f64> {
    let b = problem.background();
    let mean = convolve(problem.otf(), &state.w3)?.map(|v| (v + b).max(0.0));
    Ok(kl_value(&mean, problem.g()).unwrap_or(f64::INFINITY))
}

fn stacked_change(prev: &SplitState, next: &SplitState) -> Result<f64> {
    let a = prev.w1.distance(&next.w1)?;
    let b = prev.w2.distance(&next.w2)?;
    let c = prev.w3.distance(&next.w3)?;
    Ok((a * a + b * b + c * c).sqrt())
}

/// Runs the splitting from `x⁰ = g` until `max_iter` or the residual tolerance.
pub fn run(problem: &Problem, config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let mut state = init_state(problem, config.gamma0)?;
    let mut trace = vec![TraceRow {
        k: 0,
        gamma: state.gamma,
        primal: primal_residual(&state, problem)?,
        dual: 0.0,
        kl: observed_kl(&state, problem)?,
        change_norm: 0.0,
    }];
    let mut stop_reason = StopReason::MaxIter;
    let denoiser = config.denoiser.as_ref();
    while state.k < config.max_iter {
        let mut next = match config.strength_policy {
            StrengthPolicy::FixedProduct(s) => pnpsplit_step(&state, problem, denoiser, s),
            StrengthPolicy::FixedBeta(beta) => pidsplit_step(&state, problem, denoiser, beta),
        }?;
        next.check_finite()?;
        let res = compute_residuals((&state.w1, &state.w2, &state.w3), &next, problem)?;
        let change = stacked_change(&state, &next)?;
        next.gamma = update_gamma(next.gamma, res.primal, res.dual, &config.schedule, next.k);
        next.check_finite()?;
        state = next;

        let converged = config.residual_tol > 0.0 && res.primal.max(res.dual) <= config.residual_tol;
        if converged {
            stop_reason = StopReason::ResidualTol;
        }
        if state.k % config.trace_every == 0 || state.k == config.max_iter || converged {
            trace.push(TraceRow {
                k: state.k,
                gamma: state.gamma,
                primal: res.primal,
                dual: res.dual,
                kl: observed_kl(&state, problem)?,
                change_norm: change,
            });
        }
        if converged {
            break;
        }
    }
    Ok(RunReport {
        iterations_run: state.k,
        final_state: state,
        trace,
        stop_reason,
    })
}

/// Result of [`admm`].
#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    pub x: ImageGrid,
    pub w: ImageGrid,
    pub lambda: ImageGrid,
    pub iterations: usize,
}

/// Scaled-form two-block ADMM for `min ψ(x) + βφ(w)` subject to `Mx = w`.
///
/// `x_update(t, γ)` must return `argmin ψ(x) + ‖Mx − t‖²/(2γ)`; `w_update(v, γ)` returns
/// `prox_{γβφ}(v)` or, in plug-and-play form, a denoised `v`.
pub fn admm<FX, FW, FM>(
    mut x_update: FX,
    mut w_update: FW,
    apply_m: FM,
    w0: ImageGrid,
    lambda0: ImageGrid,
    gamma: f64,
    iterations: usize,
) -> Result<AdmmOutcome>
where
    FX: FnMut(&ImageGrid, f64) -> Result<ImageGrid>,
    FW: FnMut(&ImageGrid, f64) -> Result<ImageGrid>,
    FM: Fn(&ImageGrid) -> Result<ImageGrid>,
{
    if !(gamma > 0.0) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    w0.ensure_shape(&lambda0, "admm")?;
    let mut w = w0;
    let mut lambda = lambda0;
    let mut x = None;
    for k in 0..iterations {
        let target = w.sub(&lambda)?;
        let xk = x_update(&target, gamma)?;
        let mx = apply_m(&xk)?;
        mx.ensure_shape(&w, "admm: M x")?;
        w = w_update(&mx.zip_map(&lambda, |a, l| a + l), gamma)?;
        lambda = lambda.zip_map(&mx, |l, a| l + a).zip_map(&w, |l, v| l - v);
        if !xk.is_finite() || !w.is_finite() || !lambda.is_finite() {
            return Err(Error::Divergence {
                iteration: k + 1,
                block: "admm",
            });
        }
        x = Some(xk);
    }
    let x = match x {
        Some(x) => x,
        None => x_update(&w.sub(&lambda)?, gamma)?,
    };
    Ok(AdmmOutcome {
        x,
        w,
        lambda,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Psf;
    use crate::proximal::{dct_softthresh_denoiser, identity_denoiser, soft_threshold};

    fn flat_problem(b: f64) -> Problem {
        let g = ImageGrid::from_fn(6, 6, |r, c| 0.2 + 0.1 * ((r * 6 + c) % 5) as f64).unwrap();
        Problem::new(g, &Psf::delta(), b).unwrap()
    }

    #[test]
    fn init_with_delta_psf() {
        let p = flat_problem(0.0);
        let s = init_state(&p, 10.0).unwrap();
        assert_eq!(s.k, 0);
        assert!(s.w1.distance_inf(p.g()).unwrap() < 1e-12);
        for l in [&s.l1, &s.l2, &s.l3] {
            assert!(l.values().iter().all(|&v| v == 0.0));
        }
        assert!(init_state(&p, 0.0).is_err());
    }

    #[test]
    fn step_increments_counter_and_keeps_gamma() {
        let p = flat_problem(0.05);
        let s = init_state(&p, 3.0).unwrap();
        let n = pnpsplit_step(&s, &p, &identity_denoiser(), 0.1).unwrap();
        assert_eq!(n.k, 1);
        assert_eq!(n.gamma, 3.0);
    }

    #[test]
    fn residuals_vanish_in_trivial_cases() {
        let p = flat_problem(0.0);
        let s = init_state(&p, 2.0).unwrap();
        let r = compute_residuals((&s.w1, &s.w2, &s.w3), &s, &p).unwrap();
        assert!(r.primal < 1e-12);
        assert_eq!(r.dual, 0.0);
    }

    #[test]
    fn scheduler_branches() {
        let sched = GammaSchedule::default();
        assert_eq!(update_gamma(5.0, 1.0, 1.0, &sched, 0), 5.0);
        assert_eq!(update_gamma(5.0, 10.0, 1.0, &sched, sched.k_max + 1), 5.0);
        assert_eq!(update_gamma(5.0, 0.0, 0.0, &sched, 0), 5.0);
        let shrunk = update_gamma(1000.0, 10.0, 1.0, &sched, 3);
        assert!((shrunk - 1000.0 / 1.001).abs() < 1e-12);
        assert!((update_gamma(1000.0, 1.0, 10.0, &sched, 3) - 1001.0).abs() < 1e-9);
        assert_eq!(update_gamma(7.0, 10.0, 1.0, &GammaSchedule::fixed(), 0), 7.0);
        let literal = GammaSchedule { literal: true, ..sched };
        assert!((update_gamma(1000.0, 10.0, 1.0, &literal, 3) - 1.001e-3).abs() < 1e-15);
        // Exactly at the μ boundary nothing happens.
        assert_eq!(update_gamma(2.0, 1.001, 1.0, &sched, 0), 2.0);
    }

    #[test]
    fn config_validation() {
        let mut c = RunConfig::new(Arc::new(identity_denoiser()));
        assert!(c.validate().is_ok());
        c.max_iter = 0;
        assert!(matches!(c.validate(), Err(Error::Parameter(_))));
        c.max_iter = 1;
        c.gamma0 = -1.0;
        assert!(c.validate().is_err());
        c.gamma0 = 1.0;
        c.schedule.alpha = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn pidsplit_is_pnpsplit_at_beta_gamma() {
        let p = flat_problem(0.1);
        let s = init_state(&p, 4.0).unwrap();
        let d = dct_softthresh_denoiser();
        let a = pidsplit_step(&s, &p, &d, 0.05).unwrap();
        let b = pnpsplit_step(&s, &p, &d, 0.05 * 4.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generic_admm_solves_l1_denoising() {
        // min ½‖x − a‖² + β‖x‖₁ has the solution soft(a, β).
        let a = ImageGrid::from_fn(3, 4, |r, c| r as f64 - c as f64 * 0.7 + 0.15).unwrap();
        let beta = 0.4;
        let a2 = a.clone();
        let out = admm(
            move |t, gamma| Ok(a2.zip_map(t, |ai, ti| (gamma * ai + ti) / (gamma + 1.0))),
            |v, gamma| soft_threshold(v, gamma * beta),
            |x| Ok(x.clone()),
            ImageGrid::zeros(3, 4).unwrap(),
            ImageGrid::zeros(3, 4).unwrap(),
            1.0,
            300,
        )
        .unwrap();
        let expected = soft_threshold(&a, beta).unwrap();
        assert!(out.x.distance_inf(&expected).unwrap() < 1e-10);
        assert!(out.w.distance_inf(&expected).unwrap() < 1e-10);
    }
}
