use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Shapes are degenerate or do not agree.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A value lies outside the domain of the operation (division by zero, log of zero, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// A scalar parameter is out of range.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// The iteration produced a non-finite value.
    #[error("divergence at iteration {iteration}: non-finite value in {block}")]
    Divergence { iteration: usize, block: &'static str },
    /// A denoiser failed to produce its output.
    #[error("denoiser `{name}` failed: {message}")]
    Denoiser { name: String, message: String },
    /// Broken internal consistency check.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
