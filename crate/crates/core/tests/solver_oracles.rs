#![allow(clippy::needless_range_loop)]

mod common;

use std::sync::Arc;

use common::*;
use pnpsplit::{
    compute_residuals, dct_softthresh_denoiser, gaussian_psf, identity_denoiser, init_state, pnpsplit_step, run,
    update_gamma, GammaSchedule, ImageGrid, Problem, Psf, RunConfig, ScheduleMode, SplitState, StrengthPolicy,
};
use proptest::prelude::*;
use rand::Rng;

/// Orthonormal 1-D DCT-II matrix.
fn dct_matrix(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            (0..n)
                .map(|i| scale * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n as f64).cos())
                .collect()
        })
        .collect()
}

/// `C_h X C_wᵀ` (forward) or `C_hᵀ X C_w` (inverse).
fn dct2(x: &[f64], h: usize, w: usize, inverse: bool) -> Vec<f64> {
    let (ch, cw) = (dct_matrix(h), dct_matrix(w));
    let (ch, cw) = if inverse {
        (transpose(&ch), transpose(&cw))
    } else {
        (ch, cw)
    };
    let xm: Vec<Vec<f64>> = (0..h).map(|r| x[r * w..(r + 1) * w].to_vec()).collect();
    let y = mat_mul(&mat_mul(&ch, &xm), &transpose(&cw));
    y.into_iter().flatten().collect()
}

fn state_from(x: ImageGrid, w1: ImageGrid, w2: ImageGrid, w3: ImageGrid, l: [ImageGrid; 3], gamma: f64) -> SplitState {
    let [l1, l2, l3] = l;
    SplitState {
        x,
        w1,
        w2,
        w3,
        l1,
        l2,
        l3,
        gamma,
        k: 0,
    }
}

#[test]
fn init_state_matches_spatial_blur() {
    let mut r = rng(20);
    let psf = random_psf(&mut r, 3);
    let g = random_grid(&mut r, 6, 7, 0.0, 2.0);
    let problem = Problem::new(g.clone(), &psf, 0.3).unwrap();
    let s = init_state(&problem, 5.0).unwrap();
    let want = circular_convolve(&psf, &g);
    for (a, b) in s.w1.values().iter().zip(&want) {
        assert!((a - (b + 0.3)).abs() <= 1e-10);
    }
    assert_eq!(s.x, g);
    assert_eq!(s.w2, g);
    assert_eq!(s.w3, g);
    assert!(s
        .l1
        .values()
        .iter()
        .chain(s.l2.values())
        .chain(s.l3.values())
        .all(|&v| v == 0.0));
}

#[test]
fn delta_psf_step_matches_scalar_unroll() {
    let mut r = rng(21);
    let (h, w) = (3, 5);
    let gamma = 2.0;
    let g = random_grid(&mut r, h, w, 0.5, 3.0);
    let problem = Problem::new(g.clone(), &Psf::delta(), 0.0).unwrap();
    let mut state = state_from(
        random_grid(&mut r, h, w, 0.0, 1.0),
        random_grid(&mut r, h, w, 0.1, 2.0),
        random_grid(&mut r, h, w, -1.0, 1.0),
        random_grid(&mut r, h, w, 0.0, 1.0),
        [
            random_grid(&mut r, h, w, -0.2, 0.2),
            random_grid(&mut r, h, w, -0.2, 0.2),
            random_grid(&mut r, h, w, -0.2, 0.2),
        ],
        gamma,
    );
    let n = h * w;
    let mut sc: Vec<[f64; 6]> = (0..n)
        .map(|i| {
            [
                state.w1.values()[i],
                state.w2.values()[i],
                state.w3.values()[i],
                state.l1.values()[i],
                state.l2.values()[i],
                state.l3.values()[i],
            ]
        })
        .collect();
    let id = identity_denoiser();
    for _ in 0..5 {
        state = pnpsplit_step(&state, &problem, &id, 0.0).unwrap();
        for (i, p) in sc.iter_mut().enumerate() {
            let [w1, w2, w3, l1, l2, l3] = *p;
            let x = ((w1 - l1) + (w2 - l2) + (w3 - l3)) / 3.0;
            let c = x + l1 - gamma;
            let nw1 = 0.5 * (c + (c * c + 4.0 * gamma * g.values()[i]).sqrt());
            let nw2 = x + l2;
            let nw3 = (x + l3).max(0.0);
            *p = [nw1, nw2, nw3, l1 + x - nw1, l2 + x - nw2, l3 + x - nw3];
            assert!((state.x.values()[i] - x).abs() <= 1e-10);
        }
        for (i, p) in sc.iter().enumerate() {
            let got = [
                state.w1.values()[i],
                state.w2.values()[i],
                state.w3.values()[i],
                state.l1.values()[i],
                state.l2.values()[i],
                state.l3.values()[i],
            ];
            for (a, b) in got.iter().zip(p) {
                assert!((a - b).abs() <= 1e-10, "{got:?} vs {p:?}");
            }
        }
    }
}

#[test]
fn exact_solution_is_a_fixed_point_with_identity_denoiser() {
    let mut r = rng(22);
    let (h, w) = (12, 10);
    let b = 0.1;
    let psf = gaussian_psf(1.0, 2, h, w).unwrap();
    let x = random_grid(&mut r, h, w, 0.2, 1.0);
    let hx = circular_convolve(&psf, &x);
    let mean = ImageGrid::from_vec(h, w, hx.iter().map(|v| v + b).collect()).unwrap();
    let problem = Problem::new(mean.clone(), &psf, b).unwrap();
    let zero = ImageGrid::zeros(h, w).unwrap();
    let state = state_from(
        x.clone(),
        mean,
        x.clone(),
        x.clone(),
        [zero.clone(), zero.clone(), zero],
        3.0,
    );
    let next = pnpsplit_step(&state, &problem, &identity_denoiser(), 0.0).unwrap();
    for (a, b) in [
        (&next.x, &state.x),
        (&next.w1, &state.w1),
        (&next.w2, &state.w2),
        (&next.w3, &state.w3),
    ] {
        assert!(a.distance_inf(b).unwrap() <= 1e-10);
    }
    assert!(next.l1.norm_inf() <= 1e-10 && next.l2.norm_inf() <= 1e-10 && next.l3.norm_inf() <= 1e-10);
}

#[test]
fn constructed_saddle_point_is_fixed_for_dct_denoiser() {
    let mut r = rng(23);
    let (h, w) = (8, 6);
    let (b, gamma, s) = (0.2, 10.0, 0.05);
    let x = random_grid(&mut r, h, w, 0.2, 1.0);
    // λ₂ = W⁻¹(s·sign(Wx)) so that soft-thresholding x + λ₂ returns x.
    let coeffs = dct2(x.values(), h, w, false);
    assert!(coeffs.iter().all(|c| c.abs() > 1e-6));
    let signs: Vec<f64> = coeffs.iter().map(|c| s * c.signum()).collect();
    let l2 = ImageGrid::from_vec(h, w, dct2(&signs, h, w, true)).unwrap();
    let l1 = l2.scaled(-1.0);
    let g = ImageGrid::from_fn(h, w, |i, j| (x.get(i, j) + b) * (1.0 + l2.get(i, j) / gamma)).unwrap();
    let problem = Problem::new(g, &Psf::delta(), b).unwrap();
    let state = state_from(
        x.clone(),
        x.offset(b),
        x.clone(),
        x.clone(),
        [l1, l2, ImageGrid::zeros(h, w).unwrap()],
        gamma,
    );
    let next = pnpsplit_step(&state, &problem, &dct_softthresh_denoiser(), s).unwrap();
    for (a, b) in [
        (&next.x, &state.x),
        (&next.w1, &state.w1),
        (&next.w2, &state.w2),
        (&next.w3, &state.w3),
        (&next.l1, &state.l1),
        (&next.l2, &state.l2),
        (&next.l3, &state.l3),
    ] {
        assert!(a.distance_inf(b).unwrap() <= 1e-10);
    }
}

#[test]
fn residuals_match_dense_stacked_operator() {
    let mut r = rng(24);
    let (h, w) = (4, 4);
    let b = 0.15;
    let psf = random_psf(&mut r, 3);
    let hm = dense_blur_matrix(&psf, h, w);
    let problem = Problem::new(random_grid(&mut r, h, w, 0.0, 1.0), &psf, b).unwrap();
    for _ in 0..10 {
        let mut grids: Vec<ImageGrid> = (0..10).map(|_| random_grid(&mut r, h, w, -1.0, 1.0)).collect();
        let prev: Vec<ImageGrid> = grids.drain(7..).collect();
        let gamma = 0.5 + r.random_range(0.0..5.0);
        let mut it = grids.into_iter();
        let state = state_from(
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
            [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
            gamma,
        );
        let res = compute_residuals((&prev[0], &prev[1], &prev[2]), &state, &problem).unwrap();

        let x = state.x.values();
        let hx = mat_vec(&hm, x);
        let mut stacked = Vec::new();
        for i in 0..h * w {
            stacked.push(hx[i] - (state.w1.values()[i] - b));
        }
        for i in 0..h * w {
            stacked.push(x[i] - state.w2.values()[i]);
            stacked.push(x[i] - state.w3.values()[i]);
        }
        let primal = compensated_sum(stacked.iter().map(|v| v * v)).sqrt();
        let d1: Vec<f64> = state
            .w1
            .values()
            .iter()
            .zip(prev[0].values())
            .map(|(a, c)| a - c)
            .collect();
        let ht = mat_vec(&transpose(&hm), &d1);
        let dual_vec: Vec<f64> = (0..h * w)
            .map(|i| ht[i] + state.w2.values()[i] - prev[1].values()[i] + state.w3.values()[i] - prev[2].values()[i])
            .collect();
        let dual = compensated_sum(dual_vec.iter().map(|v| v * v)).sqrt() / gamma;
        assert!((res.primal - primal).abs() <= 1e-10 * (1.0 + primal));
        assert!((res.dual - dual).abs() <= 1e-10 * (1.0 + dual));
    }
}

#[test]
fn noiseless_data_is_recovered_with_identity_denoiser() {
    let (h, w) = (16, 16);
    let mut r = rng(25);
    let g = random_grid(&mut r, h, w, 0.1, 1.0);
    let problem = Problem::new(g.clone(), &Psf::delta(), 0.0).unwrap();
    let mut cfg = RunConfig::new(Arc::new(identity_denoiser()));
    cfg.max_iter = 500;
    cfg.gamma0 = 1.0;
    cfg.schedule = GammaSchedule::fixed();
    cfg.strength_policy = StrengthPolicy::FixedProduct(0.0);
    cfg.trace_every = 100;
    let report = run(&problem, &cfg).unwrap();
    let re = report.restored().distance(&g).unwrap() / g.norm2();
    assert!(re <= 1e-4, "relative error {re}");
}

fn small_problem(seed: u64) -> Problem {
    let mut r = rng(seed);
    let psf = gaussian_psf(1.0, 2, 12, 12).unwrap();
    let g = random_grid(&mut r, 12, 12, 0.0, 1.0);
    Problem::new(g, &psf, 0.0).unwrap()
}

#[test]
fn gamma_frozen_after_k_max() {
    let problem = small_problem(26);
    let mut cfg = RunConfig::new(Arc::new(dct_softthresh_denoiser()));
    cfg.max_iter = 80;
    cfg.gamma0 = 50.0;
    cfg.schedule.k_max = 30;
    let report = run(&problem, &cfg).unwrap();
    let frozen: Vec<f64> = report.trace.iter().filter(|t| t.k >= 30).map(|t| t.gamma).collect();
    assert!(frozen.windows(2).all(|p| p[0] == p[1]));
    assert!(
        report.trace.iter().any(|t| t.gamma != 50.0),
        "adaptive run never moved gamma"
    );
}

#[test]
fn fixed_schedule_keeps_gamma() {
    let problem = small_problem(27);
    let mut cfg = RunConfig::new(Arc::new(dct_softthresh_denoiser()));
    cfg.max_iter = 40;
    cfg.gamma0 = 7.0;
    cfg.schedule = GammaSchedule::fixed();
    let report = run(&problem, &cfg).unwrap();
    assert!(report.trace.iter().all(|t| t.gamma == 7.0));
}

#[test]
fn trace_row_count_follows_sampling() {
    let problem = small_problem(28);
    for &(k, every) in &[(10usize, 1usize), (10, 3), (12, 4), (7, 10)] {
        let mut cfg = RunConfig::new(Arc::new(identity_denoiser()));
        cfg.max_iter = k;
        cfg.trace_every = every;
        let report = run(&problem, &cfg).unwrap();
        let expected = 1 + k / every + usize::from(k % every != 0);
        assert_eq!(report.trace.len(), expected, "K={k} every={every}");
        assert_eq!(report.trace.first().unwrap().k, 0);
        assert_eq!(report.trace.last().unwrap().k, k);
    }
}

#[test]
fn denoiser_error_aborts_run() {
    struct Broken;
    impl pnpsplit::Denoiser for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn claims_firmly_nonexpansive(&self) -> bool {
            false
        }
        fn apply(&self, x: &ImageGrid, _: f64) -> pnpsplit::Result<ImageGrid> {
            Ok(x.scaled(f64::INFINITY))
        }
    }
    let problem = small_problem(29);
    let mut cfg = RunConfig::new(Arc::new(Broken));
    cfg.max_iter = 5;
    let err = run(&problem, &cfg).unwrap_err();
    assert!(matches!(err, pnpsplit::Error::Divergence { .. }), "{err}");
}

proptest! {
    #[test]
    fn gamma_update_trichotomy(gamma in 1e-3f64..1e3, primal in 0.0f64..10.0, dual in 0.0f64..10.0,
                               k in 0usize..3000) {
        let sched = GammaSchedule::default();
        let next = update_gamma(gamma, primal, dual, &sched, k);
        if k > sched.k_max {
            prop_assert_eq!(next, gamma);
        } else if primal > sched.mu * dual {
            prop_assert_eq!(next, gamma / sched.alpha);
        } else if dual > sched.mu * primal {
            prop_assert_eq!(next, gamma * sched.alpha);
        } else {
            prop_assert_eq!(next, gamma);
        }
        let fixed = GammaSchedule { mode: ScheduleMode::Fixed, ..sched };
        prop_assert_eq!(update_gamma(gamma, primal, dual, &fixed, k), gamma);
    }
}
