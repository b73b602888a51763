//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by kernel construction, scanning, training, and I/O.
#[derive(Debug)]
pub enum Error {
    /// A value that must be finite was NaN or infinite.
    NonFinite { what: String },
    /// An operation received an empty sequence where at least one element is required.
    EmptyInput { what: &'static str },
    /// Affine elements (or states) of incompatible widths were combined.
    WidthMismatch { expected: usize, got: usize },
    /// Two structured transitions of different kinds cannot compose without densifying.
    KindMismatch { left: &'static str, right: &'static str },
    /// The implicit-step denominator 1 + gamma*delta + delta^2*a vanished for a channel.
    SingularStep {
        /// Time step, when the discretization is time-varying.
        step: Option<usize>,
        channel: usize,
        denom: f64,
    },
    /// Step size below the supported minimum (1e-12).
    StepTooSmall { delta: f64 },
    /// An index pair (t, T) was out of range or inverted.
    IndexRange { t: usize, t_end: usize, len: usize },
    /// A backward pass was invoked with a cache from a differently-shaped forward.
    CacheMismatch { what: &'static str },
    /// The geometric momentum bound alpha*B/(1-beta) is undefined at beta = 1.
    DegenerateBound { beta: f64 },
    /// Training loss became non-finite.
    Divergence { step: usize },
    /// Input stream shorter than one window.
    TooShort { have: usize, need: usize },
    /// Class label outside [0, classes).
    LabelOutOfRange { label: usize, classes: usize },
    /// Malformed data or config file.
    Parse { line: usize, msg: String },
    /// Invalid run configuration (unknown key, bad flag, missing value).
    Config(String),
    Io(std::io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Error::EmptyInput { what } => write!(f, "empty input: {what}"),
            Error::WidthMismatch { expected, got } => {
                write!(f, "width mismatch: expected {expected}, got {got}")
            }
            Error::KindMismatch { left, right } => {
                write!(f, "cannot compose transition kinds {left} and {right}")
            }
            Error::SingularStep { step: Some(n), channel, denom } => write!(
                f,
                "singular discretization at step {n}, channel {channel} (denominator {denom:e})"
            ),
            Error::SingularStep { step: None, channel, denom } => write!(
                f,
                "singular discretization at channel {channel} (denominator {denom:e})"
            ),
            Error::StepTooSmall { delta } => {
                write!(f, "step size {delta:e} below minimum 1e-12")
            }
            Error::IndexRange { t, t_end, len } => {
                write!(f, "index range t={t}, T={t_end} invalid for length {len}")
            }
            Error::CacheMismatch { what } => {
                write!(f, "forward cache does not match {what}")
            }
            Error::DegenerateBound { beta } => {
                write!(f, "geometric bound undefined for beta = {beta}")
            }
            Error::Divergence { step } => write!(f, "loss diverged (non-finite) at step {step}"),
            Error::TooShort { have, need } => {
                write!(f, "stream of {have} samples shorter than one window of {need}")
            }
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} outside [0, {classes})")
            }
            Error::Parse { line, msg } => write!(f, "parse error at line {line}: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}
