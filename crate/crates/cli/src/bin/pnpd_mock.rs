//! Test bridge speaking the external denoiser protocol.
//!
//! Usage: `pnpd-mock <mode> [n]` with mode one of
//! `identity`, `softthresh` (orthonormal DCT soft-threshold), `amplify` (×2),
//! `die-after <n>` (exit status 3 after n responses), `abort-after <n>` (abort after n responses),
//! `truncate` (half a payload, then exit 0), `bad-magic`, `nan`.

use std::f64::consts::PI;
use std::io::{self, Write};
use std::process::ExitCode;

use pnpsplit_cli::external::{encode_response, read_request, Request};

fn cosine_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        let scale = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            m[k * n + i] = scale * (PI * (i as f64 + 0.5) * k as f64 / n as f64).cos();
        }
    }
    m
}

/// `out = A · X · Bᵀ` for row-major `X` of shape `h × w`, or the transposed pair when `inverse`.
fn separable(x: &[f64], h: usize, w: usize, inverse: bool) -> Vec<f64> {
    let (ch, cw) = (cosine_matrix(h), cosine_matrix(w));
    let a = |k: usize, i: usize| if inverse { ch[i * h + k] } else { ch[k * h + i] };
    let b = |k: usize, j: usize| if inverse { cw[j * w + k] } else { cw[k * w + j] };
    let mut rows = vec![0.0; h * w];
    for r in 0..h {
        for k in 0..w {
            rows[r * w + k] = (0..w).map(|j| b(k, j) * x[r * w + j]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for k in 0..h {
        for c in 0..w {
            out[k * w + c] = (0..h).map(|i| a(k, i) * rows[i * w + c]).sum();
        }
    }
    out
}

fn softthresh(req: &Request) -> Vec<f64> {
    let t = req.strength;
    let coeffs: Vec<f64> = separable(&req.pixels, req.height, req.width, false)
        .into_iter()
        .map(|c| c.signum() * (c.abs() - t).max(0.0))
        .collect();
    separable(&coeffs, req.height, req.width, true)
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = args.first().map(String::as_str).unwrap_or("identity");
    let limit: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let stdin = io::stdin();
    let mut input = stdin.lock();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut served = 0usize;
    loop {
        let req = match read_request(&mut input) {
            Ok(Some(r)) => r,
            Ok(None) => return ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("pnpd-mock: malformed request: {e}");
                return ExitCode::from(2);
            }
        };
        let response = match mode {
            "identity" => encode_response(&req.pixels),
            "softthresh" => encode_response(&softthresh(&req)),
            "amplify" => encode_response(&req.pixels.iter().map(|v| 2.0 * v).collect::<Vec<_>>()),
            "nan" => encode_response(&vec![f64::NAN; req.pixels.len()]),
            "bad-magic" => {
                let mut r = encode_response(&req.pixels);
                r[..4].copy_from_slice(b"XXXX");
                r
            }
            "truncate" => {
                let r = encode_response(&req.pixels);
                let _ = out.write_all(&r[..5 + 4 * req.pixels.len()]);
                let _ = out.flush();
                return ExitCode::SUCCESS;
            }
            "die-after" if served >= limit => {
                eprintln!("pnpd-mock: model failed after {served} requests");
                return ExitCode::from(3);
            }
            "abort-after" if served >= limit => std::process::abort(),
            "die-after" | "abort-after" => encode_response(&req.pixels),
            other => {
                eprintln!("pnpd-mock: unknown mode `{other}`");
                return ExitCode::from(2);
            }
        };
        if out.write_all(&response).and_then(|_| out.flush()).is_err() {
            return ExitCode::from(4);
        }
        served += 1;
    }
}
