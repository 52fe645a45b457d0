//! Subprocess denoiser speaking a small binary protocol over stdin/stdout.
//!
//! Request: `PNPD`, version `0x01`, height and width as `u32` LE, strength as `f64` LE, then
//! `height × width` pixels as `f64` LE in row-major order. Response: `PNPR`, version byte, then
//! a pixel payload of the same shape.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, ExitStatus, Stdio};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use pnpsplit::{Denoiser, ImageGrid};

pub const REQUEST_MAGIC: &[u8; 4] = b"PNPD";
pub const RESPONSE_MAGIC: &[u8; 4] = b"PNPR";
pub const VERSION: u8 = 0x01;

const STDERR_KEEP: usize = 4096;
const EXIT_WAIT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub height: usize,
    pub width: usize,
    pub strength: f64,
    pub pixels: Vec<f64>,
}

pub fn encode_request(height: usize, width: usize, strength: f64, pixels: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + 8 * pixels.len());
    out.extend_from_slice(REQUEST_MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&strength.to_le_bytes());
    for p in pixels {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn encode_response(pixels: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + 8 * pixels.len());
    out.extend_from_slice(RESPONSE_MAGIC);
    out.push(VERSION);
    for p in pixels {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

fn read_pixels(r: &mut impl Read, n: usize) -> io::Result<Vec<f64>> {
    let mut buf = vec![0u8; 8 * n];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Reads one request; `Ok(None)` on a clean end of stream before the first byte.
pub fn read_request(r: &mut impl Read) -> io::Result<Option<Request>> {
    let mut head = [0u8; 21];
    let mut got = 0;
    while got < head.len() {
        match r.read(&mut head[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated request header")),
            n => got += n,
        }
    }
    if &head[..4] != REQUEST_MAGIC || head[4] != VERSION {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "bad request magic or version",
        ));
    }
    let height = u32::from_le_bytes(head[5..9].try_into().unwrap()) as usize;
    let width = u32::from_le_bytes(head[9..13].try_into().unwrap()) as usize;
    let strength = f64::from_le_bytes(head[13..21].try_into().unwrap());
    let pixels = read_pixels(r, height * width)?;
    Ok(Some(Request {
        height,
        width,
        strength,
        pixels,
    }))
}

/// Reads a response carrying `n` pixels.
pub fn read_response(r: &mut impl Read, n: usize) -> Result<Vec<f64>, String> {
    let mut head = [0u8; 5];
    r.read_exact(&mut head)
        .map_err(|e| format!("short read on response header ({e})"))?;
    if &head[..4] != RESPONSE_MAGIC {
        return Err(format!("bad response magic {:?}", &head[..4]));
    }
    if head[4] != VERSION {
        return Err(format!("unsupported response version {}", head[4]));
    }
    read_pixels(r, n).map_err(|e| format!("short read on response payload of {n} pixels ({e})"))
}

struct Session {
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    stdout: BufReader<ChildStdout>,
    stderr_tail: Arc<Mutex<Vec<u8>>>,
    drain: Option<JoinHandle<()>>,
    /// Set once the stream is unusable; later calls repeat this error.
    failed: Option<String>,
}

impl Session {
    fn stderr_text(&self) -> String {
        let tail = self.stderr_tail.lock().unwrap_or_else(|e| e.into_inner());
        String::from_utf8_lossy(&tail).trim().to_string()
    }

    fn wait_exit(&mut self) -> Option<ExitStatus> {
        let start = Instant::now();
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return Some(status),
                Ok(None) if start.elapsed() < EXIT_WAIT => std::thread::sleep(Duration::from_millis(10)),
                _ => return None,
            }
        }
    }

    /// Classifies a broken exchange: a nonzero exit code is a bridge failure, anything
    /// else (signal, clean exit, still running) a protocol violation.
    fn diagnose(&mut self, detail: &str) -> String {
        let status = self.wait_exit();
        if status.is_none() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
        if let Some(handle) = self.drain.take() {
            let _ = handle.join();
        }
        let stderr = self.stderr_text();
        let stderr = if stderr.is_empty() {
            String::new()
        } else {
            format!("; stderr: {stderr}")
        };
        match status.and_then(|s| s.code()) {
            Some(code) if code != 0 => format!("bridge error: process exited with status {code}{stderr}"),
            _ => {
                let how = match status {
                    Some(s) => format!("process ended ({s})"),
                    None => "process unresponsive, killed".into(),
                };
                format!("protocol error: {detail}; {how}{stderr}")
            }
        }
    }

    fn exchange(&mut self, v: &ImageGrid, strength: f64) -> Result<Vec<f64>, String> {
        if let Some(msg) = &self.failed {
            return Err(msg.clone());
        }
        let request = encode_request(v.height(), v.width(), strength, v.values());
        let stdin = self.stdin.as_mut().expect("stdin open while session is live");
        if let Err(e) = stdin.write_all(&request).and_then(|_| stdin.flush()) {
            let msg = self.diagnose(&format!("write failed ({e})"));
            self.failed = Some(msg.clone());
            return Err(msg);
        }
        match read_response(&mut self.stdout, v.len()) {
            Ok(p) => Ok(p),
            Err(detail) => {
                let msg = self.diagnose(&detail);
                self.failed = Some(msg.clone());
                Err(msg)
            }
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        // Closing stdin is the end-of-stream signal.
        self.stdin.take();
        if self.wait_exit().is_none() {
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
        if let Some(handle) = self.drain.take() {
            let _ = handle.join();
        }
    }
}

/// Denoiser backed by one long-lived subprocess. Exchanges are serialized by a mutex.
pub struct ExternalDenoiser {
    name: String,
    session: Mutex<Session>,
}

impl std::fmt::Debug for ExternalDenoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalDenoiser").field("name", &self.name).finish()
    }
}

impl ExternalDenoiser {
    /// Starts `command`, split on whitespace into program and arguments.
    pub fn spawn(command: &str) -> anyhow::Result<Self> {
        let mut parts = command.split_whitespace();
        let Some(program) = parts.next() else {
            bail!("empty external denoiser command");
        };
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .with_context(|| format!("launching external denoiser `{command}`"))?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut stderr = child.stderr.take().expect("piped stderr");
        let stderr_tail = Arc::new(Mutex::new(Vec::new()));
        let sink = Arc::clone(&stderr_tail);
        // Without a reader a chatty bridge would block on a full stderr pipe.
        let drain = std::thread::spawn(move || {
            let mut buf = [0u8; 1024];
            while let Ok(n) = stderr.read(&mut buf) {
                if n == 0 {
                    break;
                }
                let mut tail = sink.lock().unwrap_or_else(|e| e.into_inner());
                tail.extend_from_slice(&buf[..n]);
                if tail.len() > STDERR_KEEP {
                    let cut = tail.len() - STDERR_KEEP;
                    tail.drain(..cut);
                }
            }
        });
        Ok(Self {
            name: format!("external:{command}"),
            session: Mutex::new(Session {
                child,
                stdin: Some(stdin),
                stdout,
                stderr_tail,
                drain: Some(drain),
                failed: None,
            }),
        })
    }

    fn error(&self, message: String) -> pnpsplit::Error {
        pnpsplit::Error::Denoiser {
            name: self.name.clone(),
            message,
        }
    }
}

impl Denoiser for ExternalDenoiser {
    fn name(&self) -> &str {
        &self.name
    }

    fn claims_firmly_nonexpansive(&self) -> bool {
        false
    }

    fn apply(&self, v: &ImageGrid, strength: f64) -> pnpsplit::Result<ImageGrid> {
        let pixels = {
            let mut session = self.session.lock().unwrap_or_else(|e| e.into_inner());
            session.exchange(v, strength).map_err(|m| self.error(m))?
        };
        if let Some(i) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(self.error(format!("bridge returned non-finite value {} at index {i}", pixels[i])));
        }
        ImageGrid::from_vec(v.height(), v.width(), pixels)
    }
}
