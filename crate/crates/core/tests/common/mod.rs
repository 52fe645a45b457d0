//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the FFT, DCT or closed-form paths of the library.

#![allow(dead_code, clippy::needless_range_loop)]

use pnpsplit::{ImageGrid, Psf};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> ImageGrid {
    ImageGrid::from_fn(h, w, |_, _| rng.random_range(lo..hi)).unwrap()
}

pub fn random_psf(rng: &mut ChaCha8Rng, size: usize) -> Psf {
    let k = random_grid(rng, size, size, 0.05, 1.0);
    Psf::normalized(k, (size / 2, size / 2)).unwrap()
}

/// `y[r, c] = Σ k[i, j] · x[r − (i − ar), c − (j − ac)]` with periodic wrap.
pub fn circular_convolve(psf: &Psf, x: &ImageGrid) -> Vec<f64> {
    let (h, w) = x.shape();
    let k = psf.kernel();
    let (ar, ac) = psf.anchor();
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for i in 0..k.height() {
                for j in 0..k.width() {
                    let rr = (r as isize - (i as isize - ar as isize)).rem_euclid(h as isize) as usize;
                    let cc = (c as isize - (j as isize - ac as isize)).rem_euclid(w as isize) as usize;
                    acc += k.get(i, j) * x.get(rr, cc);
                }
            }
            out[r * w + c] = acc;
        }
    }
    out
}

/// Dense `n × n` matrix of the circular convolution on an `h × w` grid.
pub fn dense_blur_matrix(psf: &Psf, h: usize, w: usize) -> Vec<Vec<f64>> {
    let n = h * w;
    let mut m = vec![vec![0.0; n]; n];
    for col in 0..n {
        let e = ImageGrid::from_fn(h, w, |r, c| if r * w + c == col { 1.0 } else { 0.0 }).unwrap();
        let y = circular_convolve(psf, &e);
        for row in 0..n {
            m[row][col] = y[row];
        }
    }
    m
}

pub fn mat_vec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn transpose(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (rows, cols) = (m.len(), m[0].len());
    (0..cols).map(|j| (0..rows).map(|i| m[i][j]).collect()).collect()
}

pub fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let bt = transpose(b);
    a.iter()
        .map(|row| {
            bt.iter()
                .map(|col| row.iter().zip(col).map(|(x, y)| x * y).sum())
                .collect()
        })
        .collect()
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(row, &bi)| {
            let mut r = row.clone();
            r.push(bi);
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (m[row][n] - s) / m[row][row];
    }
    x
}

/// Direct O(n²) 2-D DFT of a real grid: returns (re, im) per frequency.
pub fn naive_dft(values: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for p in 0..h {
                for q in 0..w {
                    let phase = -2.0 * std::f64::consts::PI * ((u * p) as f64 / h as f64 + (v * q) as f64 / w as f64);
                    re += values[p * w + q] * phase.cos();
                    im += values[p * w + q] * phase.sin();
                }
            }
            out.push((re, im));
        }
    }
    out
}

/// Golden-section minimization of the scalar KL-prox objective
/// `γ(g log(g/w) + w − g) + ½(w − (v + b))²` over `w ∈ [lo, hi]`.
///
/// Points are compared through the exact difference of objective values, written without
/// cancellation, so the bracket can shrink far below `√ε`.
pub fn golden_prox_kl(v: f64, b: f64, gamma: f64, g: f64, lo: f64, hi: f64) -> f64 {
    let center = v + b;
    // f(a) − f(b) = (a − b)·[γ(1 − g·ln(a/b)/(a − b)) + ½(a + b) − center]
    let diff = |a: f64, bb: f64| -> f64 {
        let h = a - bb;
        if h == 0.0 {
            return 0.0;
        }
        let log_ratio_over_h = (h / bb).ln_1p() / h;
        h * (gamma * (1.0 - g * log_ratio_over_h) + 0.5 * (a + bb) - center)
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut d) = (lo, hi);
    let mut b1 = d - inv_phi * (d - a);
    let mut c1 = a + inv_phi * (d - a);
    for _ in 0..400 {
        if d - a <= 1e-15 * d.max(1e-300) {
            break;
        }
        if diff(b1, c1) < 0.0 {
            d = c1;
            c1 = b1;
            b1 = d - inv_phi * (d - a);
        } else {
            a = b1;
            b1 = c1;
            c1 = a + inv_phi * (d - a);
        }
    }
    0.5 * (a + d)
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
